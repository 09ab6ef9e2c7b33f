#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "exgnet/errors.hpp"
#include "exgnet/records.hpp"
#include "testkit.hpp"

using namespace exg;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

Manifest manifest_of(const std::vector<int>& label_indices) {
    Manifest m;
    for (std::size_t i = 0; i < label_indices.size(); ++i)
        m.entries.push_back({"r" + std::to_string(i), "r.f32", kAllLabels[label_indices[i]], std::nullopt});
    return m;
}

std::vector<int> folds_of(const Manifest& m) {
    std::vector<int> out;
    for (const auto& e : m.entries) out.push_back(e.fold.value());
    return out;
}

}  // namespace

TEST_CASE("label tokens and profiles") {
    CHECK(parse_label("AF_AFIB") == ClassLabel::AF_AFIB);
    CHECK_FALSE(parse_label("XX").has_value());
    CHECK_FALSE(LabelSet::chapman().contains(ClassLabel::SA));
    CHECK(LabelSet::chapman().size() == 5);
    CHECK_FALSE(LabelSet::ningbo().contains(ClassLabel::AT_SVT));
    CHECK(LabelSet::ningbo().contains(ClassLabel::SA));
    CHECK(LabelSet::parse("SR, AF_AFIB").index_of(ClassLabel::AF_AFIB) == 1);
    CHECK(LabelSet::first(2).labels() == std::vector<ClassLabel>{ClassLabel::SR, ClassLabel::SB});
    CHECK_THROWS_AS(LabelSet::parse("SR,XX"), UsageError);
}

TEST_CASE("manifest loading") {
    const auto dir = testkit::temp_dir("manifest");
    const std::vector<float> samples(5000, 0.5f);
    for (const char* id : {"a", "b", "c"}) write_samples(dir / (std::string(id) + ".f32"), samples);

    SUBCASE("three valid rows") {
        write_text(dir / "m.csv", "id,path,label,fold\na,a.f32,SR,\nb,b.f32,ST,1\nc,c.f32,AF_AFIB,\n");
        const auto m = load_manifest(dir / "m.csv", LabelSet::chapman());
        REQUIRE(m.entries.size() == 3);
        CHECK(m.entries[1].fold == 1);
        CHECK_FALSE(m.entries[0].fold.has_value());
        CHECK(m.resolve(m.entries[2]) == dir / "c.f32");
    }
    SUBCASE("unknown label token is a parse error naming the line") {
        write_text(dir / "m.csv", "id,path,label,fold\na,a.f32,SR,\nb,b.f32,XX,\n");
        try {
            load_manifest(dir / "m.csv", LabelSet::chapman());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("duplicate id is an integrity error") {
        write_text(dir / "m.csv", "id,path,label,fold\nr001,a.f32,SR,\nr001,b.f32,SB,\n");
        CHECK_THROWS_AS(load_manifest(dir / "m.csv", LabelSet::chapman()), IntegrityError);
    }
    SUBCASE("missing sample file") {
        write_text(dir / "m.csv", "id,path,label,fold\na,zzz.f32,SR,\n");
        CHECK_THROWS_AS(load_manifest(dir / "m.csv", LabelSet::chapman()), IntegrityError);
    }
    SUBCASE("labels outside the profile are dropped") {
        write_text(dir / "m.csv", "id,path,label,fold\na,a.f32,SA,\nb,b.f32,SR,\n");
        const auto m = load_manifest(dir / "m.csv", LabelSet::chapman());
        CHECK(m.entries.size() == 1);
        CHECK(m.dropped_rows == 1);
    }
    SUBCASE("bad header and multi-label rows") {
        write_text(dir / "m.csv", "id,file,label,fold\na,a.f32,SR,\n");
        CHECK_THROWS_AS(load_manifest(dir / "m.csv", LabelSet::chapman()), ParseError);
        write_text(dir / "m.csv", "id,path,label,fold\na,a.f32,SR;SB,\n");
        CHECK_THROWS_AS(load_manifest(dir / "m.csv", LabelSet::chapman()), ParseError);
    }
    SUBCASE("write then load") {
        Manifest m;
        m.base_dir = dir;
        m.entries = {{"a", "a.f32", ClassLabel::SB, 3}, {"b", "b.f32", ClassLabel::SR, std::nullopt}};
        write_manifest(dir / "w.csv", m);
        const auto back = load_manifest(dir / "w.csv", LabelSet::chapman());
        CHECK(back.entries[0].label == ClassLabel::SB);
        CHECK(back.entries[0].fold == 3);
        CHECK_FALSE(back.entries[1].fold.has_value());
    }
}

TEST_CASE("records round-trip bit exactly") {
    const auto dir = testkit::temp_dir("records");
    std::mt19937_64 rng(1);
    std::normal_distribution<float> d(0, 1);
    EcgRecord rec;
    rec.id = "x";
    rec.samples.resize(5000);
    for (auto& s : rec.samples) s = d(rng);
    rec.samples[7] = -0.0f;
    rec.samples[8] = 1e-40f;  // subnormal
    write_record(dir / "x.f32", rec);
    Manifest m;
    m.base_dir = dir;
    m.entries = {{"x", "x.f32", ClassLabel::ST, std::nullopt}};
    const auto back = load_record(m, m.entries[0]);
    REQUIRE(back.samples.size() == 5000);
    CHECK(std::memcmp(back.samples.data(), rec.samples.data(), 5000 * sizeof(float)) == 0);
    CHECK(back.label == ClassLabel::ST);
    CHECK(back.duration_seconds() == 10.0);

    // truncate by one value
    std::filesystem::resize_file(dir / "x.f32", 4999 * 4);
    CHECK_THROWS_AS(load_record(m, m.entries[0]), IntegrityError);
    std::filesystem::resize_file(dir / "x.f32", 4999 * 4 + 2);
    CHECK_THROWS_AS(read_samples(dir / "x.f32"), IntegrityError);
    m.entries[0].path = "nope.f32";
    CHECK_THROWS_AS(load_record(m, m.entries[0]), IoError);
    CHECK_THROWS_AS(load_record(m, {"x", "x.f32", ClassLabel::SR, std::nullopt}, 5000, 250), IntegrityError);
}

TEST_CASE("SplitMix64 reference outputs") {
    SplitMix64 g(0);
    CHECK(g.next() == 0xe220a8397b1dcdafULL);
    CHECK(g.next() == 0x6e789e6aa1b965f4ULL);
    CHECK(g.next() == 0x06c45d188009454fULL);
}

TEST_CASE("fold assignment matches the scripted shuffle oracle") {
    // expected values from tests/oracles/fold_oracle.py
    CHECK(folds_of(assign_folds(manifest_of(std::vector<int>(10, 0)), 5, 7)) ==
          std::vector<int>{4, 1, 2, 1, 0, 2, 3, 4, 0, 3});

    std::vector<int> labels;
    for (int i = 0; i < 37; ++i) labels.push_back(i % 3 ? (i * 7) % 5 : i % 4);
    CHECK(folds_of(assign_folds(manifest_of(labels), 5, 42)) ==
          std::vector<int>{1, 3, 3, 4, 1, 3, 0, 4, 4, 0, 3, 2, 2, 4, 3, 1, 4, 2, 3,
                           0, 1, 1, 1, 2, 4, 0, 2, 0, 3, 2, 1, 1, 0, 0, 4, 0, 2});

    CHECK(folds_of(assign_folds(manifest_of({4, 0, 4, 0, 5, 5, 0, 4, 5, 0, 4, 5, 0, 5, 4}), 3,
                                123456789012345ULL)) == std::vector<int>{1, 1, 2, 1, 1, 0, 2, 0, 2, 0, 0, 2, 0, 1, 2});
}

TEST_CASE("fold assignment is stratified and deterministic") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 2);
    const auto a = assign_folds(manifest_of(labels), 5, 3);
    std::map<std::pair<int, int>, int> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) ++counts[{labels[i], a.entries[i].fold.value()}];
    for (int c = 0; c < 2; ++c)
        for (int f = 0; f < 5; ++f) CHECK(counts[{c, f}] == 10);
    CHECK(folds_of(a) == folds_of(assign_folds(manifest_of(labels), 5, 3)));

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = static_cast<int>(testkit::pick(rng, 2, 7));
        std::vector<int> labs;
        for (int c = 0; c < 6; ++c)
            for (std::size_t n = testkit::pick(rng, static_cast<std::size_t>(k), 30); n > 0; --n) labs.push_back(c);
        std::shuffle(labs.begin(), labs.end(), rng);
        const auto m = assign_folds(manifest_of(labs), k, rng());
        std::map<std::pair<int, int>, int> cnt;
        std::map<int, int> per_class;
        for (std::size_t i = 0; i < labs.size(); ++i) {
            ++cnt[{labs[i], m.entries[i].fold.value()}];
            ++per_class[labs[i]];
        }
        for (const auto& [c, total] : per_class)
            for (int f = 0; f < k; ++f) CHECK(std::abs(cnt[{c, f}] - static_cast<double>(total) / k) <= 1.0);
    }
}

TEST_CASE("fold assignment rejects small classes") {
    CHECK_THROWS_AS(assign_folds(manifest_of({0, 0, 0, 1, 1, 1, 1, 1}), 5, 1), UsageError);
    CHECK_THROWS_AS(assign_folds(manifest_of({0, 0}), 1, 1), UsageError);
}
