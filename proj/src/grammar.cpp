#include "crg/grammar.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crg/errors.hpp"
#include "crg/rng.hpp"

namespace crg {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

static SentenceTemplate tmpl(TemplateKind kind, const std::string& pattern) {
    return SentenceTemplate{kind, tokenize(pattern)};
}

GrammarSpec default_grammar() {
    GrammarSpec g;
    g.image_height = 64;
    g.image_width = 64;
    g.anatomy_names = {"left lung",          "right lung",
                       "heart",              "mediastinum",
                       "left hemidiaphragm", "right hemidiaphragm",
                       "spine",              "trachea"};
    g.region_boxes = {
        {4, 8, 28, 40},   // left lung
        {36, 8, 60, 40},  // right lung
        {24, 28, 44, 48}, // heart
        {26, 6, 38, 30},  // mediastinum
        {4, 40, 28, 52},  // left hemidiaphragm
        {36, 40, 60, 52}, // right hemidiaphragm
        {28, 4, 36, 60},  // spine
        {26, 2, 38, 18},  // trachea
    };
    g.pathology_names = {"opacity",       "effusion", "pneumonia", "edema",
                         "atelectasis",   "consolidation", "nodule",
                         "pneumothorax",  "cardiomegaly",  "fibrosis"};
    std::sort(g.pathology_names.begin(), g.pathology_names.end());
    g.templates = {
        tmpl(TemplateKind::Positive, "{p} is seen in the {a} ."),
        tmpl(TemplateKind::Positive, "there is {p} in the {a} ."),
        tmpl(TemplateKind::Positive, "the {a} shows {p} ."),
        tmpl(TemplateKind::PairNegative, "no {p} is seen in the {a} ."),
        tmpl(TemplateKind::PairNegative, "the {a} is clear of {p} ."),
        tmpl(TemplateKind::AnatomyNormal, "the {a} is normal ."),
        tmpl(TemplateKind::Healthy, "no acute findings ."),
    };

    std::set<std::string> vocab;
    for (const auto& t : g.templates)
        for (const auto& tok : t.tokens)
            if (tok != "{p}" && tok != "{a}") vocab.insert(tok);
    for (const auto& n : g.anatomy_names)
        for (const auto& tok : tokenize(n)) vocab.insert(tok);
    for (const auto& n : g.pathology_names)
        for (const auto& tok : tokenize(n)) vocab.insert(tok);
    g.vocabulary.assign(vocab.begin(), vocab.end());
    return g;
}

void validate_grammar(const GrammarSpec& g) {
    if (g.image_height <= 0 || g.image_width <= 0)
        throw ConfigError("grammar: image dimensions must be positive");
    if (g.anatomy_names.empty()) throw ConfigError("grammar: no anatomies");
    if (g.pathology_names.empty()) throw ConfigError("grammar: no pathologies");
    if (g.region_boxes.size() != g.anatomy_names.size())
        throw ConfigError("grammar: every anatomy needs exactly one region box");

    for (size_t j = 0; j < g.region_boxes.size(); ++j) {
        const RegionBox& b = g.region_boxes[j];
        if (b.x0 >= b.x1 || b.y0 >= b.y1)
            throw ConfigError("grammar: empty region box for anatomy '" +
                              g.anatomy_names[j] + "'");
        if (b.x0 < 0 || b.y0 < 0 || b.x1 > g.image_width || b.y1 > g.image_height)
            throw ConfigError("grammar: region box outside image bounds for anatomy '" +
                              g.anatomy_names[j] + "'");
    }

    auto check_unique = [](const std::vector<std::string>& names, const char* kind) {
        std::set<std::string> seen;
        for (const auto& n : names) {
            if (n.empty()) throw ConfigError(std::string("grammar: empty ") + kind + " name");
            if (!seen.insert(n).second)
                throw ConfigError(std::string("grammar: duplicate ") + kind + " name '" + n +
                                  "'");
        }
    };
    check_unique(g.anatomy_names, "anatomy");
    check_unique(g.pathology_names, "pathology");

    const GenParams& p = g.gen;
    double psum = p.prob_zero + p.prob_one + p.prob_two;
    if (std::abs(psum - 1.0) > 1e-9)
        throw ConfigError("grammar: pathology count probabilities must sum to 1");
    if (p.min_negatives < 0 || p.max_negatives < p.min_negatives)
        throw ConfigError("grammar: invalid negative sentence count range");

    // parse unambiguity: concept-name tokens and template literals disjoint
    std::set<std::string> literals;
    bool has_positive = false, has_healthy = false;
    for (const auto& t : g.templates) {
        if (t.kind == TemplateKind::Positive) has_positive = true;
        if (t.kind == TemplateKind::Healthy) has_healthy = true;
        for (const auto& tok : t.tokens)
            if (tok != "{p}" && tok != "{a}") literals.insert(tok);
    }
    if (!has_positive) throw ConfigError("grammar: at least one positive template required");
    if (!has_healthy) throw ConfigError("grammar: a healthy template is required");
    std::set<std::string> vocab(g.vocabulary.begin(), g.vocabulary.end());
    auto check_tokens = [&](const std::vector<std::string>& names) {
        for (const auto& n : names)
            for (const auto& tok : tokenize(n)) {
                if (literals.count(tok))
                    throw ConfigError("grammar: concept token '" + tok +
                                      "' collides with a template literal");
                if (!vocab.count(tok))
                    throw ConfigError("grammar: concept token '" + tok +
                                      "' missing from vocabulary");
            }
    };
    check_tokens(g.anatomy_names);
    check_tokens(g.pathology_names);
    for (const auto& lit : literals)
        if (!vocab.count(lit))
            throw ConfigError("grammar: template literal '" + lit +
                              "' missing from vocabulary");
}

static json template_to_json(const SentenceTemplate& t) {
    static const char* names[] = {"positive", "pair_negative", "anatomy_normal", "healthy"};
    return json{{"kind", names[static_cast<int>(t.kind)]},
                {"pattern", join_tokens(t.tokens)}};
}

static SentenceTemplate template_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    TemplateKind k;
    if (kind == "positive")
        k = TemplateKind::Positive;
    else if (kind == "pair_negative")
        k = TemplateKind::PairNegative;
    else if (kind == "anatomy_normal")
        k = TemplateKind::AnatomyNormal;
    else if (kind == "healthy")
        k = TemplateKind::Healthy;
    else
        throw ConfigError("grammar: unknown template kind '" + kind + "'");
    return SentenceTemplate{k, tokenize(j.at("pattern").get<std::string>())};
}

std::string grammar_to_json(const GrammarSpec& g) {
    json boxes = json::array();
    for (const auto& b : g.region_boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    json templates = json::array();
    for (const auto& t : g.templates) templates.push_back(template_to_json(t));
    json j{{"image_height", g.image_height},
           {"image_width", g.image_width},
           {"anatomy_names", g.anatomy_names},
           {"pathology_names", g.pathology_names},
           {"region_boxes", boxes},
           {"templates", templates},
           {"vocabulary", g.vocabulary},
           {"gen",
            {{"prob_zero", g.gen.prob_zero},
             {"prob_one", g.gen.prob_one},
             {"prob_two", g.gen.prob_two},
             {"min_negatives", g.gen.min_negatives},
             {"max_negatives", g.gen.max_negatives},
             {"lesion_contrast", g.gen.lesion_contrast},
             {"texture_amplitude", g.gen.texture_amplitude},
             {"noise_amplitude", g.gen.noise_amplitude},
             {"mask_threshold", g.gen.mask_threshold},
             {"train_fraction", g.gen.train_fraction},
             {"val_fraction", g.gen.val_fraction}}}};
    return j.dump();
}

GrammarSpec grammar_from_json(const std::string& text) {
    json j = json::parse(text);
    GrammarSpec g;
    g.image_height = j.at("image_height").get<int>();
    g.image_width = j.at("image_width").get<int>();
    g.anatomy_names = j.at("anatomy_names").get<std::vector<std::string>>();
    g.pathology_names = j.at("pathology_names").get<std::vector<std::string>>();
    for (const auto& b : j.at("region_boxes"))
        g.region_boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                                  b.at(3).get<int>()});
    for (const auto& t : j.at("templates")) g.templates.push_back(template_from_json(t));
    g.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    const json& gp = j.at("gen");
    g.gen.prob_zero = gp.at("prob_zero").get<double>();
    g.gen.prob_one = gp.at("prob_one").get<double>();
    g.gen.prob_two = gp.at("prob_two").get<double>();
    g.gen.min_negatives = gp.at("min_negatives").get<int>();
    g.gen.max_negatives = gp.at("max_negatives").get<int>();
    g.gen.lesion_contrast = gp.at("lesion_contrast").get<double>();
    g.gen.texture_amplitude = gp.at("texture_amplitude").get<double>();
    g.gen.noise_amplitude = gp.at("noise_amplitude").get<double>();
    g.gen.mask_threshold = gp.at("mask_threshold").get<double>();
    g.gen.train_fraction = gp.at("train_fraction").get<double>();
    g.gen.val_fraction = gp.at("val_fraction").get<double>();
    return g;
}

std::string grammar_hash(const GrammarSpec& g) {
    std::uint64_t h = fnv1a(grammar_to_json(g));
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace crg
