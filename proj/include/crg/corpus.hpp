#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crg/grammar.hpp"

namespace crg {

/// Presence matrix E over (pathology, anatomy) pairs in grammar order,
/// with the derived per-pathology and per-anatomy labels.
struct TripletSet {
    Eigen::MatrixXi exist;  // [n_p x n_a], entries 0/1

    Eigen::VectorXi y_pathology() const;  // 1 iff row has any 1
    Eigen::VectorXi y_anatomy() const;    // 1 iff column has any 1
    bool operator==(const TripletSet& o) const { return exist == o.exist; }
};

struct LesionMask {
    int pathology = 0;
    int anatomy = 0;
    std::vector<std::pair<int, int>> runs;  // row-major (start, length) RLE

    std::vector<std::uint8_t> decode(int height, int width) const;
};

struct Sample {
    int id = 0;
    Eigen::MatrixXd image;  // [H x W], values in [0, 1]
    std::vector<std::string> report_tokens;
    TripletSet triplets;
    std::vector<LesionMask> masks;

    std::string report_text() const { return join_tokens(report_tokens); }
};

/// Deterministic synthesis of one paired (image, report) sample.
Sample generate_sample(const GrammarSpec& grammar, std::uint64_t seed);

/// Synthesis variant for analysis subsets: exactly one present pathology,
/// planted at a seed-chosen anatomy.
Sample generate_single_pathology_sample(const GrammarSpec& grammar, int pathology,
                                        std::uint64_t seed);

/// Exact parser over the grammar templates. Throws DataError naming the
/// first sentence that matches no template.
TripletSet parse_report(const GrammarSpec& grammar,
                        const std::vector<std::string>& report_tokens);

/// Lenient variant for scoring generated text: unmatched sentences are
/// skipped and counted instead of raising.
TripletSet parse_report_lenient(const GrammarSpec& grammar,
                                const std::vector<std::string>& report_tokens,
                                int* skipped_sentences);

/// Structural validation plus the template round-trip property (every
/// instantiated template parses back to its generating triplet).
void validate_grammar_full(const GrammarSpec& g);

struct SplitRange {
    int begin = 0;
    int end = 0;  // half-open
    int size() const { return end - begin; }
};

struct CorpusManifest {
    int version = 1;
    GrammarSpec grammar;
    std::string grammar_hash;
    std::uint64_t seed = 0;
    int n_samples = 0;
    SplitRange train, val, test;
};

/// Writes manifest.json, records.jsonl and images/*.pgm under `dir`.
/// Re-running with identical arguments reproduces identical bytes.
CorpusManifest write_corpus(const GrammarSpec& grammar, int n_samples, std::uint64_t seed,
                            const std::string& dir);

class CorpusReader {
  public:
    explicit CorpusReader(const std::string& dir);

    const CorpusManifest& manifest() const { return manifest_; }
    int size() const { return manifest_.n_samples; }

    /// Sample with image loaded from its PGM file.
    Sample load(int index) const;
    /// Sample without image (report/labels only); cheap.
    Sample load_meta(int index) const;

    std::vector<int> split_indices(const std::string& split) const;

  private:
    std::string dir_;
    CorpusManifest manifest_;
    std::vector<std::string> record_lines_;
};

CorpusManifest read_manifest(const std::string& dir);

}  // namespace crg
