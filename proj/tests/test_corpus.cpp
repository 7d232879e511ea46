#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "crg/corpus.hpp"
#include "crg/errors.hpp"
#include "crg/pgm.hpp"

using namespace crg;
namespace fs = std::filesystem;

namespace {

GrammarSpec tiny_grammar() {
    GrammarSpec g = default_grammar();
    g.anatomy_names = {"left lung", "heart"};
    g.region_boxes = {{4, 8, 28, 40}, {24, 28, 44, 48}};
    g.pathology_names = {"opacity"};
    return g;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("parse: positive plus anatomy-normal sentence") {
    GrammarSpec g = tiny_grammar();
    auto ts = parse_report(g, tokenize("opacity is seen in the left lung . the heart is normal ."));
    CHECK(ts.exist(0, 0) == 1);
    CHECK(ts.exist(0, 1) == 0);
    CHECK(ts.y_anatomy()(0) == 1);
    CHECK(ts.y_anatomy()(1) == 0);
    CHECK(ts.y_pathology()(0) == 1);
}

TEST_CASE("parse: healthy report is all zeros") {
    GrammarSpec g = tiny_grammar();
    auto ts = parse_report(g, tokenize("no acute findings ."));
    CHECK(ts.exist.maxCoeff() == 0);
    CHECK(ts.y_pathology().sum() == 0);
    CHECK(ts.y_anatomy().sum() == 0);
}

TEST_CASE("parse: unknown sentence raises with sentence index") {
    GrammarSpec g = tiny_grammar();
    auto tokens = tokenize("no acute findings . lung opacity here .");
    CHECK_THROWS_WITH_AS(parse_report(g, tokens),
                         doctest::Contains("sentence 1"), DataError);
    int skipped = 0;
    auto ts = parse_report_lenient(g, tokens, &skipped);
    CHECK(skipped == 1);
    CHECK(ts.exist.maxCoeff() == 0);
}

TEST_CASE("parse: explicit negative clears an earlier positive") {
    GrammarSpec g = tiny_grammar();
    auto ts = parse_report(
        g, tokenize("opacity is seen in the heart . no opacity is seen in the heart ."));
    CHECK(ts.exist(0, 1) == 0);
}

TEST_CASE("generate_sample: determinism, forced triplet, label consistency") {
    GrammarSpec g = default_grammar();
    Sample a = generate_sample(g, 1234);
    Sample b = generate_sample(g, 1234);
    CHECK(a.report_tokens == b.report_tokens);
    CHECK((a.image - b.image).norm() == 0.0);
    CHECK(a.triplets == b.triplets);
    REQUIRE(a.masks.size() == b.masks.size());
    for (size_t i = 0; i < a.masks.size(); ++i) CHECK(a.masks[i].runs == b.masks[i].runs);

    // label consistency on a spread of seeds
    for (std::uint64_t s = 0; s < 50; ++s) {
        Sample smp = generate_sample(g, s);
        auto yp = smp.triplets.y_pathology();
        auto ya = smp.triplets.y_anatomy();
        for (int i = 0; i < g.n_pathologies(); ++i)
            CHECK(yp(i) == (smp.triplets.exist.row(i).maxCoeff() > 0 ? 1 : 0));
        for (int j = 0; j < g.n_anatomies(); ++j)
            CHECK(ya(j) == (smp.triplets.exist.col(j).maxCoeff() > 0 ? 1 : 0));
    }
}

TEST_CASE("generate_sample: round-trip over 1000 seeds") {
    GrammarSpec g = default_grammar();
    for (std::uint64_t s = 0; s < 1000; ++s) {
        Sample smp = generate_sample(g, s);
        TripletSet parsed = parse_report(g, smp.report_tokens);
        REQUIRE(parsed == smp.triplets);
    }
}

TEST_CASE("generate_sample: lesion pixels stay inside their anatomy box") {
    GrammarSpec g = default_grammar();
    int masks_seen = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Sample smp = generate_sample(g, s);
        for (const auto& m : smp.masks) {
            ++masks_seen;
            REQUIRE(smp.triplets.exist(m.pathology, m.anatomy) == 1);
            const RegionBox& b = g.region_boxes[size_t(m.anatomy)];
            auto grid = m.decode(g.image_height, g.image_width);
            bool any = false;
            for (int y = 0; y < g.image_height; ++y)
                for (int x = 0; x < g.image_width; ++x)
                    if (grid[size_t(y) * g.image_width + x]) {
                        any = true;
                        REQUIRE(b.contains(x, y));
                    }
            REQUIRE(any);  // mask nonempty
        }
        // absent pathologies have no mask entries
        std::set<std::pair<int, int>> mask_keys;
        for (const auto& m : smp.masks) mask_keys.insert({m.pathology, m.anatomy});
        CHECK(mask_keys.size() == size_t(smp.triplets.exist.sum()));
    }
    CHECK(masks_seen > 100);
}

TEST_CASE("generate_sample: healthy sample emits the healthy sentence") {
    GrammarSpec g = default_grammar();
    bool found_healthy = false;
    for (std::uint64_t s = 0; s < 200 && !found_healthy; ++s) {
        Sample smp = generate_sample(g, s);
        if (smp.triplets.y_pathology().sum() == 0) {
            found_healthy = true;
            std::string text = smp.report_text();
            CHECK(text.find("no acute findings .") != std::string::npos);
            CHECK(smp.masks.empty());
        }
    }
    CHECK(found_healthy);
}

TEST_CASE("single-pathology synthesis plants exactly one finding") {
    GrammarSpec g = default_grammar();
    for (int p = 0; p < g.n_pathologies(); ++p) {
        Sample s = generate_single_pathology_sample(g, p, 99);
        CHECK(s.triplets.exist.sum() == 1);
        CHECK(s.triplets.y_pathology()(p) == 1);
    }
    CHECK_THROWS_AS(generate_single_pathology_sample(g, -1, 0), ConfigError);
}

TEST_CASE("invalid grammar raises configuration errors naming the problem") {
    GrammarSpec g = tiny_grammar();
    g.region_boxes[0] = {10, 10, 10, 20};  // empty box
    CHECK_THROWS_WITH_AS(generate_sample(g, 0), doctest::Contains("empty region box"),
                         ConfigError);

    GrammarSpec g2 = tiny_grammar();
    g2.region_boxes[1] = {24, 28, 80, 48};  // out of bounds
    CHECK_THROWS_WITH_AS(generate_sample(g2, 0), doctest::Contains("outside image bounds"),
                         ConfigError);

    GrammarSpec g3 = tiny_grammar();
    g3.pathology_names = {"opacity", "opacity"};
    CHECK_THROWS_AS(generate_sample(g3, 0), ConfigError);
}

TEST_CASE("grammar JSON round-trips and hash is stable") {
    GrammarSpec g = default_grammar();
    std::string j = grammar_to_json(g);
    GrammarSpec g2 = grammar_from_json(j);
    CHECK(grammar_to_json(g2) == j);
    CHECK(grammar_hash(g2) == grammar_hash(g));
    g2.gen.lesion_contrast += 0.01;
    CHECK(grammar_hash(g2) != grammar_hash(g));
}

TEST_CASE("pgm round-trip is 16-bit exact") {
    Eigen::MatrixXd img(3, 5);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) img(r, c) = (r * 5 + c) / 14.0;
    fs::path p = fs::temp_directory_path() / "crg_pgm_test.pgm";
    write_pgm16(p.string(), img);
    Eigen::MatrixXd back = read_pgm16(p.string());
    REQUIRE(back.rows() == 3);
    REQUIRE(back.cols() == 5);
    CHECK((back - img).cwiseAbs().maxCoeff() < 0.5 / 65535.0);
    write_pgm16(p.string(), back);
    Eigen::MatrixXd again = read_pgm16(p.string());
    CHECK((again - back).norm() == 0.0);
    fs::remove(p);
}

TEST_CASE("write_corpus: determinism, split accounting, parseability") {
    GrammarSpec g = default_grammar();
    fs::path dir1 = fs::temp_directory_path() / "crg_corpus_a";
    fs::path dir2 = fs::temp_directory_path() / "crg_corpus_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    CorpusManifest m1 = write_corpus(g, 20, 7, dir1.string());
    CorpusManifest m2 = write_corpus(g, 20, 7, dir2.string());
    CHECK(m1.train.size() + m1.val.size() + m1.test.size() == 20);
    CHECK(read_file(dir1 / "manifest.json") == read_file(dir2 / "manifest.json"));
    CHECK(read_file(dir1 / "records.jsonl") == read_file(dir2 / "records.jsonl"));
    CHECK(read_file(dir1 / "images/000007.pgm") == read_file(dir2 / "images/000007.pgm"));

    CorpusReader reader(dir1.string());
    REQUIRE(reader.size() == 20);
    for (int i = 0; i < reader.size(); ++i) {
        Sample s = reader.load(i);
        TripletSet parsed = parse_report(g, s.report_tokens);
        CHECK(parsed == s.triplets);
        CHECK(s.image.rows() == 64);
        CHECK(s.image.maxCoeff() <= 1.0);
        CHECK(s.image.minCoeff() >= 0.0);
    }
    // regenerated sample equals stored metadata
    CHECK(reader.split_indices("train").size() == size_t(m1.train.size()));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("write_corpus rejects bad arguments") {
    GrammarSpec g = default_grammar();
    CHECK_THROWS_AS(write_corpus(g, 0, 1, "/tmp/crg_unused"), ConfigError);
    CHECK_THROWS_AS(write_corpus(g, 2, 1, "/proc/definitely/not/writable"), IoError);
}
