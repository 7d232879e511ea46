#pragma once

#include <string>
#include <vector>

namespace crg {

/// Pixel rectangle, half-open: x in [x0, x1), y in [y0, y1).
struct RegionBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(double x, double y) const {
        return x >= x0 && x < x1 && y >= y0 && y < y1;
    }
};

enum class TemplateKind { Positive, PairNegative, AnatomyNormal, Healthy };

/// Token pattern with "{p}" / "{a}" slots, e.g. "{p} is seen in the {a} ."
struct SentenceTemplate {
    TemplateKind kind;
    std::vector<std::string> tokens;
};

/// Knobs for sample synthesis. Part of the grammar so one hash covers
/// everything that determines corpus bytes.
struct GenParams {
    // per-anatomy pathology count distribution, P(0), P(1), P(2)
    double prob_zero = 0.62;
    double prob_one = 0.28;
    double prob_two = 0.10;
    int min_negatives = 1;
    int max_negatives = 3;
    double lesion_contrast = 0.40;   // peak lesion amplitude above local texture
    double texture_amplitude = 0.10; // per-anatomy texture strength
    double noise_amplitude = 0.04;   // smooth background noise strength
    double mask_threshold = 0.25;    // mask = lesion pixels above this * peak
    double train_fraction = 0.8;
    double val_fraction = 0.1;
};

struct GrammarSpec {
    int image_height = 64;
    int image_width = 64;
    std::vector<std::string> anatomy_names;
    std::vector<std::string> pathology_names;
    std::vector<RegionBox> region_boxes;  // one per anatomy
    std::vector<SentenceTemplate> templates;
    std::vector<std::string> vocabulary;  // closed word set, sorted
    GenParams gen;

    int n_pathologies() const { return static_cast<int>(pathology_names.size()); }
    int n_anatomies() const { return static_cast<int>(anatomy_names.size()); }
};

/// The checked-in default: 8 anatomies, 10 pathologies, 64x64 images.
GrammarSpec default_grammar();

/// Throws ConfigError naming the violated invariant.
void validate_grammar(const GrammarSpec& g);

/// Canonical JSON (sorted keys) and its FNV-1a hash as lowercase hex.
std::string grammar_to_json(const GrammarSpec& g);
GrammarSpec grammar_from_json(const std::string& text);
std::string grammar_hash(const GrammarSpec& g);

std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace crg
