#include "crg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crg/errors.hpp"
#include "crg/pgm.hpp"
#include "crg/rng.hpp"

namespace crg {

namespace fs = std::filesystem;
using nlohmann::json;

Eigen::VectorXi TripletSet::y_pathology() const {
    if (exist.size() == 0) return Eigen::VectorXi();
    return exist.rowwise().maxCoeff();
}

Eigen::VectorXi TripletSet::y_anatomy() const {
    if (exist.size() == 0) return Eigen::VectorXi();
    return exist.colwise().maxCoeff().transpose();
}

std::vector<std::uint8_t> LesionMask::decode(int height, int width) const {
    std::vector<std::uint8_t> grid(static_cast<size_t>(height) * width, 0);
    for (auto [start, len] : runs) {
        if (start < 0 || len <= 0 || start + len > height * width)
            throw DataError("lesion mask RLE out of bounds");
        std::fill(grid.begin() + start, grid.begin() + start + len, std::uint8_t{1});
    }
    return grid;
}

static std::vector<std::pair<int, int>> rle_encode(const std::vector<std::uint8_t>& grid) {
    std::vector<std::pair<int, int>> runs;
    int n = static_cast<int>(grid.size());
    int i = 0;
    while (i < n) {
        if (grid[static_cast<size_t>(i)]) {
            int j = i;
            while (j < n && grid[static_cast<size_t>(j)]) ++j;
            runs.emplace_back(i, j - i);
            i = j;
        } else {
            ++i;
        }
    }
    return runs;
}

// ---------------------------------------------------------------------------
// report synthesis / parsing
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> instantiate(const SentenceTemplate& t, const std::string& pathology,
                                     const std::string& anatomy) {
    std::vector<std::string> out;
    for (const auto& tok : t.tokens) {
        if (tok == "{p}")
            for (const auto& w : tokenize(pathology)) out.push_back(w);
        else if (tok == "{a}")
            for (const auto& w : tokenize(anatomy)) out.push_back(w);
        else
            out.push_back(tok);
    }
    return out;
}

struct ParsedSentence {
    TemplateKind kind;
    int pathology = -1;  // index or -1
    int anatomy = -1;
};

int find_name(const std::vector<std::string>& names, const std::string& joined) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == joined) return static_cast<int>(i);
    return -1;
}

/// Match one sentence against one template. Slot boundaries are found by
/// scanning to the template's next literal token; grammar validation
/// guarantees concept-name tokens never collide with literals.
bool match_template(const GrammarSpec& g, const SentenceTemplate& t,
                    const std::vector<std::string>& sent, ParsedSentence& out) {
    size_t si = 0;
    std::string slot_p, slot_a;
    for (size_t ti = 0; ti < t.tokens.size(); ++ti) {
        const std::string& tok = t.tokens[ti];
        if (tok == "{p}" || tok == "{a}") {
            // next literal in the template (slots are never adjacent)
            const std::string* next_lit = nullptr;
            if (ti + 1 < t.tokens.size()) next_lit = &t.tokens[ti + 1];
            std::string collected;
            bool any = false;
            while (si < sent.size() && (next_lit == nullptr || sent[si] != *next_lit)) {
                if (any) collected += ' ';
                collected += sent[si];
                any = true;
                ++si;
            }
            if (!any) return false;
            if (tok == "{p}")
                slot_p = collected;
            else
                slot_a = collected;
        } else {
            if (si >= sent.size() || sent[si] != tok) return false;
            ++si;
        }
    }
    if (si != sent.size()) return false;

    out.kind = t.kind;
    out.pathology = -1;
    out.anatomy = -1;
    if (!slot_p.empty()) {
        out.pathology = find_name(g.pathology_names, slot_p);
        if (out.pathology < 0) return false;
    }
    if (!slot_a.empty()) {
        out.anatomy = find_name(g.anatomy_names, slot_a);
        if (out.anatomy < 0) return false;
    }
    return true;
}

bool parse_sentence(const GrammarSpec& g, const std::vector<std::string>& sent,
                    ParsedSentence& out) {
    for (const auto& t : g.templates)
        if (match_template(g, t, sent, out)) return true;
    return false;
}

TripletSet parse_impl(const GrammarSpec& g, const std::vector<std::string>& tokens,
                      bool lenient, int* skipped) {
    TripletSet ts;
    ts.exist = Eigen::MatrixXi::Zero(g.n_pathologies(), g.n_anatomies());
    if (skipped) *skipped = 0;

    std::vector<std::string> sent;
    int sentence_index = 0;
    size_t pos = 0;
    while (pos < tokens.size()) {
        sent.clear();
        while (pos < tokens.size()) {
            sent.push_back(tokens[pos]);
            ++pos;
            if (sent.back() == ".") break;
        }
        ParsedSentence p;
        bool ok = sent.back() == "." && parse_sentence(g, sent, p);
        if (!ok) {
            if (lenient) {
                if (skipped) ++(*skipped);
                ++sentence_index;
                continue;
            }
            throw DataError("parse error at sentence " + std::to_string(sentence_index) +
                            ": '" + join_tokens(sent) + "' matches no template");
        }
        switch (p.kind) {
            case TemplateKind::Positive:
                ts.exist(p.pathology, p.anatomy) = 1;
                break;
            case TemplateKind::PairNegative:
                ts.exist(p.pathology, p.anatomy) = 0;
                break;
            case TemplateKind::AnatomyNormal:
                ts.exist.col(p.anatomy).setZero();
                break;
            case TemplateKind::Healthy:
                break;
        }
        ++sentence_index;
    }
    return ts;
}

}  // namespace

TripletSet parse_report(const GrammarSpec& g, const std::vector<std::string>& tokens) {
    return parse_impl(g, tokens, false, nullptr);
}

TripletSet parse_report_lenient(const GrammarSpec& g, const std::vector<std::string>& tokens,
                                int* skipped) {
    return parse_impl(g, tokens, true, skipped);
}

void validate_grammar_full(const GrammarSpec& g) {
    validate_grammar(g);
    for (const auto& t : g.templates) {
        for (int i = 0; i < g.n_pathologies(); ++i) {
            for (int j = 0; j < g.n_anatomies(); ++j) {
                auto sent = instantiate(t, g.pathology_names[size_t(i)],
                                        g.anatomy_names[size_t(j)]);
                ParsedSentence p;
                if (!parse_sentence(g, sent, p) || p.kind != t.kind)
                    throw ConfigError("grammar: template round-trip failed for '" +
                                      join_tokens(sent) + "'");
                bool wants_p = t.kind == TemplateKind::Positive ||
                               t.kind == TemplateKind::PairNegative;
                bool wants_a = t.kind != TemplateKind::Healthy;
                if (wants_p && p.pathology != i)
                    throw ConfigError("grammar: template round-trip lost the pathology in '" +
                                      join_tokens(sent) + "'");
                if (wants_a && p.anatomy != j)
                    throw ConfigError("grammar: template round-trip lost the anatomy in '" +
                                      join_tokens(sent) + "'");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// image synthesis
// ---------------------------------------------------------------------------

namespace {

struct LesionSignature {
    double aspect;     // sigma_x / sigma_y
    double angle;      // radians
    double sigma_frac; // of min box dimension
    bool ring;
};

// Deterministic per-pathology appearance; the identity cue the encoder can
// learn. Index-derived, not seed-derived.
LesionSignature lesion_signature(int pathology) {
    LesionSignature s;
    s.aspect = 1.0 + 1.5 * static_cast<double>((pathology * 37) % 7) / 6.0;
    s.angle = 3.14159265358979323846 * static_cast<double>((pathology * 53) % 8) / 8.0;
    s.sigma_frac = 0.10 + 0.015 * static_cast<double>((pathology * 29) % 5);
    s.ring = pathology % 3 == 0;
    return s;
}

void render_background(Eigen::MatrixXd& img, const GenParams& gp, Rng& rng) {
    int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
    img.setConstant(0.40);
    for (int k = 0; k < 3; ++k) {
        double f = rng.uniform(0.5, 2.0);
        double th = rng.uniform(0.0, 3.14159265358979323846);
        double ph = rng.uniform(0.0, 6.283185307179586);
        double amp = gp.noise_amplitude * rng.uniform(0.5, 1.0);
        double fx = f * std::cos(th) / w, fy = f * std::sin(th) / h;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img(y, x) += amp * std::sin(6.283185307179586 * (fx * x + fy * y) + ph);
    }
}

void render_texture(Eigen::MatrixXd& img, const GrammarSpec& g, int anatomy, Rng& rng) {
    const RegionBox& b = g.region_boxes[size_t(anatomy)];
    int n = g.n_anatomies();
    // direction/frequency fixed per anatomy; phase and amplitude jitter per sample
    double freq = 0.08 + 0.05 * static_cast<double>((anatomy * 31) % 5);
    double th = 3.14159265358979323846 * static_cast<double>(anatomy) / n;
    double dc = 0.03 * (static_cast<double>((anatomy * 17) % 3) - 1.0);
    double ph = rng.uniform(0.0, 6.283185307179586);
    double amp = g.gen.texture_amplitude * rng.uniform(0.8, 1.2);
    double cx = std::cos(th), sx = std::sin(th);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x)
            img(y, x) += dc + amp * std::sin(6.283185307179586 * freq * (cx * x + sx * y) + ph);
}

// Renders the lesion into img clipped to the anatomy box and returns the
// thresholded mask grid. Guaranteed nonempty for the configured sigmas.
std::vector<std::uint8_t> render_lesion(Eigen::MatrixXd& img, const GrammarSpec& g,
                                        int pathology, int anatomy, Rng& rng) {
    const RegionBox& b = g.region_boxes[size_t(anatomy)];
    LesionSignature sig = lesion_signature(pathology);
    int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());

    double mx = 0.15 * b.width(), my = 0.15 * b.height();
    double cx = rng.uniform(b.x0 + mx, b.x1 - mx);
    double cy = rng.uniform(b.y0 + my, b.y1 - my);
    double base_sigma = sig.sigma_frac * std::min(b.width(), b.height());
    double jitter = rng.uniform(0.8, 1.2);
    double sy = std::max(2.0, base_sigma * jitter);
    double sxv = std::max(2.0, sy * sig.aspect);
    double ang = sig.angle + rng.uniform(-0.2, 0.2);
    double contrast = g.gen.lesion_contrast * rng.uniform(0.85, 1.15);
    double ca = std::cos(ang), sa = std::sin(ang);

    std::vector<std::uint8_t> mask(static_cast<size_t>(h) * w, 0);
    for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
            double dx = x - cx, dy = y - cy;
            double u = (ca * dx + sa * dy) / sxv;
            double v = (-sa * dx + ca * dy) / sy;
            double q = u * u + v * v;
            // ring profile peaks at 1 on the q = 2 annulus; solid peaks at center
            double profile = sig.ring ? q * std::exp(1.0 - q / 2.0) / 2.0
                                      : std::exp(-q / 2.0);
            img(y, x) += contrast * profile;
            if (profile >= g.gen.mask_threshold)
                mask[static_cast<size_t>(y) * w + x] = 1;
        }
    }
    return mask;
}

Sample assemble_sample(const GrammarSpec& g, const Eigen::MatrixXi& exist,
                       std::uint64_t seed, Rng& rng) {
    Sample s;
    s.triplets.exist = exist;
    int np = g.n_pathologies(), na = g.n_anatomies();

    // image
    s.image.resize(g.image_height, g.image_width);
    render_background(s.image, g.gen, rng);
    for (int j = 0; j < na; ++j) render_texture(s.image, g, j, rng);
    for (int j = 0; j < na; ++j) {
        for (int i = 0; i < np; ++i) {
            if (!exist(i, j)) continue;
            auto grid = render_lesion(s.image, g, i, j, rng);
            auto runs = rle_encode(grid);
            if (runs.empty())
                throw NumericalError("lesion rendered with empty mask; sigma too small");
            s.masks.push_back(LesionMask{i, j, runs});
        }
    }
    s.image = s.image.cwiseMax(0.0).cwiseMin(1.0);

    // report: positives in scan order, then negatives
    std::vector<const SentenceTemplate*> positive, pair_negative;
    const SentenceTemplate* anatomy_normal = nullptr;
    const SentenceTemplate* healthy = nullptr;
    for (const auto& t : g.templates) {
        switch (t.kind) {
            case TemplateKind::Positive: positive.push_back(&t); break;
            case TemplateKind::PairNegative: pair_negative.push_back(&t); break;
            case TemplateKind::AnatomyNormal: anatomy_normal = &t; break;
            case TemplateKind::Healthy: healthy = &t; break;
        }
    }

    std::vector<std::vector<std::string>> sentences;
    bool any_positive = false;
    for (int j = 0; j < na; ++j) {
        for (int i = 0; i < np; ++i) {
            if (!exist(i, j)) continue;
            any_positive = true;
            const auto* t = positive[size_t(rng.uniform_int(int(positive.size())))];
            sentences.push_back(
                instantiate(*t, g.pathology_names[size_t(i)], g.anatomy_names[size_t(j)]));
        }
    }
    if (!any_positive) sentences.push_back(instantiate(*healthy, "", ""));

    int n_neg = g.gen.min_negatives +
                (g.gen.max_negatives > g.gen.min_negatives
                     ? rng.uniform_int(g.gen.max_negatives - g.gen.min_negatives + 1)
                     : 0);
    std::vector<int> healthy_anatomies;
    for (int j = 0; j < na; ++j)
        if (exist.col(j).maxCoeff() == 0) healthy_anatomies.push_back(j);
    std::vector<std::pair<int, int>> absent_pairs;
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < na; ++j)
            if (!exist(i, j)) absent_pairs.emplace_back(i, j);

    for (int k = 0; k < n_neg; ++k) {
        bool use_anatomy = anatomy_normal != nullptr && !healthy_anatomies.empty() &&
                           rng.uniform() < 0.5;
        if (use_anatomy) {
            int pick = rng.uniform_int(int(healthy_anatomies.size()));
            int j = healthy_anatomies[size_t(pick)];
            healthy_anatomies.erase(healthy_anatomies.begin() + pick);
            sentences.push_back(instantiate(*anatomy_normal, "", g.anatomy_names[size_t(j)]));
        } else if (!absent_pairs.empty() && !pair_negative.empty()) {
            int pick = rng.uniform_int(int(absent_pairs.size()));
            auto [i, j] = absent_pairs[size_t(pick)];
            absent_pairs.erase(absent_pairs.begin() + pick);
            const auto* t = pair_negative[size_t(rng.uniform_int(int(pair_negative.size())))];
            sentences.push_back(
                instantiate(*t, g.pathology_names[size_t(i)], g.anatomy_names[size_t(j)]));
        }
    }

    for (const auto& sent : sentences)
        s.report_tokens.insert(s.report_tokens.end(), sent.begin(), sent.end());

    // round-trip guarantee baked into the generator
    TripletSet parsed = parse_report(g, s.report_tokens);
    if (!(parsed == s.triplets))
        throw NumericalError("generated report does not parse back to its triplets (seed " +
                             std::to_string(seed) + ")");
    return s;
}

}  // namespace

Sample generate_sample(const GrammarSpec& g, std::uint64_t seed) {
    validate_grammar(g);
    Rng rng = Rng::stream(seed, "sample");
    int np = g.n_pathologies(), na = g.n_anatomies();

    Eigen::MatrixXi exist = Eigen::MatrixXi::Zero(np, na);
    for (int j = 0; j < na; ++j) {
        double u = rng.uniform();
        int count = u < g.gen.prob_zero ? 0 : (u < g.gen.prob_zero + g.gen.prob_one ? 1 : 2);
        count = std::min(count, np);
        for (int c = 0; c < count; ++c) {
            int i = rng.uniform_int(np);
            while (exist(i, j)) i = (i + 1) % np;  // distinct pathologies per anatomy
            exist(i, j) = 1;
        }
    }
    return assemble_sample(g, exist, seed, rng);
}

Sample generate_single_pathology_sample(const GrammarSpec& g, int pathology,
                                        std::uint64_t seed) {
    validate_grammar(g);
    if (pathology < 0 || pathology >= g.n_pathologies())
        throw ConfigError("generate_single_pathology_sample: pathology index out of range");
    Rng rng = Rng::stream(seed, "sample1p");
    Eigen::MatrixXi exist = Eigen::MatrixXi::Zero(g.n_pathologies(), g.n_anatomies());
    exist(pathology, rng.uniform_int(g.n_anatomies())) = 1;
    return assemble_sample(g, exist, seed, rng);
}

// ---------------------------------------------------------------------------
// corpus on disk
// ---------------------------------------------------------------------------

static std::uint64_t sample_seed(std::uint64_t corpus_seed, int index) {
    Rng r = Rng::stream(corpus_seed, "corpus:" + std::to_string(index));
    return r.next_u64();
}

static json record_to_json(const GrammarSpec& g, const Sample& s,
                           const std::string& image_rel) {
    json triplets = json::array();
    for (int i = 0; i < s.triplets.exist.rows(); ++i)
        for (int j = 0; j < s.triplets.exist.cols(); ++j)
            if (s.triplets.exist(i, j))
                triplets.push_back({g.pathology_names[size_t(i)], g.anatomy_names[size_t(j)], 1});
    json masks = json::array();
    for (const auto& m : s.masks) {
        json rle = json::array();
        for (auto [start, len] : m.runs) {
            rle.push_back(start);
            rle.push_back(len);
        }
        masks.push_back({{"pathology", g.pathology_names[size_t(m.pathology)]},
                         {"anatomy", g.anatomy_names[size_t(m.anatomy)]},
                         {"rle", rle}});
    }
    return json{{"id", s.id},
                {"image", image_rel},
                {"report", s.report_text()},
                {"triplets", triplets},
                {"masks", masks}};
}

static json manifest_to_json(const CorpusManifest& m) {
    return json{{"version", m.version},
                {"grammar", json::parse(grammar_to_json(m.grammar))},
                {"grammar_hash", m.grammar_hash},
                {"seed", m.seed},
                {"n_samples", m.n_samples},
                {"splits",
                 {{"train", {m.train.begin, m.train.end}},
                  {"val", {m.val.begin, m.val.end}},
                  {"test", {m.test.begin, m.test.end}}}}};
}

CorpusManifest write_corpus(const GrammarSpec& grammar, int n_samples, std::uint64_t seed,
                            const std::string& dir) {
    if (n_samples <= 0) throw ConfigError("write_corpus: n_samples must be positive");
    validate_grammar_full(grammar);

    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create corpus directory " + dir);

    CorpusManifest m;
    m.grammar = grammar;
    m.grammar_hash = grammar_hash(grammar);
    m.seed = seed;
    m.n_samples = n_samples;
    int n_train = static_cast<int>(std::lround(grammar.gen.train_fraction * n_samples));
    int n_val = static_cast<int>(std::lround(grammar.gen.val_fraction * n_samples));
    n_train = std::min(n_train, n_samples);
    n_val = std::min(n_val, n_samples - n_train);
    m.train = {0, n_train};
    m.val = {n_train, n_train + n_val};
    m.test = {n_train + n_val, n_samples};

    std::ofstream records(fs::path(dir) / "records.jsonl");
    if (!records) throw IoError("cannot write records.jsonl under " + dir);
    for (int i = 0; i < n_samples; ++i) {
        Sample s = generate_sample(grammar, sample_seed(seed, i));
        s.id = i;
        char name[32];
        snprintf(name, sizeof(name), "images/%06d.pgm", i);
        write_pgm16((fs::path(dir) / name).string(), s.image);
        records << record_to_json(grammar, s, name).dump() << "\n";
    }
    records.close();
    if (!records) throw IoError("short write to records.jsonl under " + dir);

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest.json under " + dir);
    mf << manifest_to_json(m).dump(2) << "\n";
    mf.close();
    if (!mf) throw IoError("short write to manifest.json under " + dir);
    return m;
}

static CorpusManifest manifest_from_json(const json& j) {
    CorpusManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw DataError("unsupported corpus manifest version");
    m.grammar = grammar_from_json(j.at("grammar").dump());
    m.grammar_hash = j.at("grammar_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_samples = j.at("n_samples").get<int>();
    const json& sp = j.at("splits");
    m.train = {sp.at("train").at(0).get<int>(), sp.at("train").at(1).get<int>()};
    m.val = {sp.at("val").at(0).get<int>(), sp.at("val").at(1).get<int>()};
    m.test = {sp.at("test").at(0).get<int>(), sp.at("test").at(1).get<int>()};
    return m;
}

CorpusManifest read_manifest(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot read manifest.json under " + dir);
    json j;
    f >> j;
    return manifest_from_json(j);
}

CorpusReader::CorpusReader(const std::string& dir) : dir_(dir) {
    manifest_ = read_manifest(dir);
    std::ifstream f(fs::path(dir) / "records.jsonl");
    if (!f) throw IoError("cannot read records.jsonl under " + dir);
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) record_lines_.push_back(line);
    if (static_cast<int>(record_lines_.size()) != manifest_.n_samples)
        throw DataError("corpus record count does not match manifest");
}

Sample CorpusReader::load_meta(int index) const {
    if (index < 0 || index >= manifest_.n_samples)
        throw DataError("corpus index out of range");
    const GrammarSpec& g = manifest_.grammar;
    json j = json::parse(record_lines_[size_t(index)]);
    Sample s;
    s.id = j.at("id").get<int>();
    s.report_tokens = tokenize(j.at("report").get<std::string>());
    s.triplets.exist = Eigen::MatrixXi::Zero(g.n_pathologies(), g.n_anatomies());
    for (const auto& t : j.at("triplets")) {
        int pi = find_name(g.pathology_names, t.at(0).get<std::string>());
        int ai = find_name(g.anatomy_names, t.at(1).get<std::string>());
        if (pi < 0 || ai < 0) throw DataError("corpus record names unknown concept");
        s.triplets.exist(pi, ai) = t.at(2).get<int>();
    }
    for (const auto& mj : j.at("masks")) {
        LesionMask m;
        m.pathology = find_name(g.pathology_names, mj.at("pathology").get<std::string>());
        m.anatomy = find_name(g.anatomy_names, mj.at("anatomy").get<std::string>());
        if (m.pathology < 0 || m.anatomy < 0)
            throw DataError("corpus mask names unknown concept");
        const auto& rle = mj.at("rle");
        for (size_t k = 0; k + 1 < rle.size(); k += 2)
            m.runs.emplace_back(rle.at(k).get<int>(), rle.at(k + 1).get<int>());
        s.masks.push_back(std::move(m));
    }
    return s;
}

Sample CorpusReader::load(int index) const {
    Sample s = load_meta(index);
    json j = json::parse(record_lines_[size_t(index)]);
    s.image = read_pgm16((fs::path(dir_) / j.at("image").get<std::string>()).string());
    return s;
}

std::vector<int> CorpusReader::split_indices(const std::string& split) const {
    SplitRange r;
    if (split == "train")
        r = manifest_.train;
    else if (split == "val")
        r = manifest_.val;
    else if (split == "test")
        r = manifest_.test;
    else
        throw ConfigError("unknown split '" + split + "'");
    std::vector<int> idx;
    for (int i = r.begin; i < r.end; ++i) idx.push_back(i);
    return idx;
}

}  // namespace crg
