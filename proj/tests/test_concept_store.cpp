#include "netdissect/concept_store.hpp"
#include "netdissect/dataset.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace netdissect;

namespace {

RawLabel raw(std::string name, std::string src, Category c, std::vector<ImageId> imgs) {
    return {std::move(name), std::move(src), c, std::move(imgs)};
}

std::vector<ImageId> range(ImageId b, ImageId e) {
    std::vector<ImageId> v;
    for (ImageId i = b; i < e; ++i) v.push_back(i);
    return v;
}

}  // namespace

TEST(UnifyLabels, EmptySourcesGiveEmptyIndex) {
    auto r = unify_labels({}, {}, {}, 10);
    EXPECT_EQ(r.index.size(), 0u);
    EXPECT_TRUE(r.index.synonym_map.empty());
}

TEST(UnifyLabels, SynonymMergeAndBlacklistedAlias) {
    // auto -> car merges; machine -> car is refused because machine is blacklisted.
    std::vector<RawLabel> src = {raw("car", "ade", Category::object, {1, 2}),
                                 raw("auto", "pascal", Category::object, {3}),
                                 raw("machine", "ade", Category::object, {4})};
    SynonymTable syn = {{"auto", "car"}, {"machine", "car"}};
    auto r = unify_labels(src, syn, {"machine"}, 1);
    ASSERT_EQ(r.index.size(), 2u);
    auto car = r.index.find("car", Category::object);
    auto machine = r.index.find("machine", Category::object);
    ASSERT_TRUE(car && machine);
    EXPECT_EQ(r.index.at(*car).sample_count, 3u);
    EXPECT_EQ(r.index.at(*machine).sample_count, 1u);
    EXPECT_EQ(r.index.synonym_map.at("auto"), std::vector<ConceptId>{*car});
    EXPECT_EQ(r.index.synonym_map.at("machine"), std::vector<ConceptId>{*machine});
}

TEST(UnifyLabels, BlacklistedTargetIsNotFollowed) {
    SynonymTable syn = {{"car", "machine"}};
    auto r = unify_labels({raw("car", "ade", Category::object, {1})}, syn, {"machine"}, 1);
    ASSERT_EQ(r.index.size(), 1u);
    EXPECT_EQ(r.index.concepts[0].name, "car");
}

TEST(UnifyLabels, PascalPartCompoundLabel) {
    std::vector<RawLabel> src = {raw("cat", "ade", Category::object, range(0, 10)),
                                 raw("left front cat leg", "pascal-part", Category::part, range(20, 30)),
                                 raw("leg", "ade", Category::part, range(40, 45))};
    auto r = unify_labels(src, {}, {}, 10);
    auto cat = r.index.find("cat", Category::object);
    auto leg = r.index.find("leg", Category::part);
    ASSERT_TRUE(cat && leg);
    EXPECT_EQ(r.index.at(*cat).sample_count, 20u);
    EXPECT_EQ(r.index.at(*leg).sample_count, 15u);
    EXPECT_EQ(r.index.synonym_map.at("left front cat leg"), (std::vector<ConceptId>{*cat, *leg}));
}

TEST(UnifyLabels, QualifierStrippingIsOrderIndependent) {
    EXPECT_EQ(strip_positional("left front cat leg"), "cat leg");
    EXPECT_EQ(strip_positional("front left cat leg"), "cat leg");
    EXPECT_EQ(strip_positional("  Upper   Lower Arm "), "arm");
    EXPECT_EQ(strip_positional("left"), "left");

    std::mt19937_64 gen(3);
    std::vector<std::string> quals = default_positional_qualifiers();
    for (int trial = 0; trial < 50; ++trial) {
        std::shuffle(quals.begin(), quals.end(), gen);
        std::string name = quals[0] + " " + quals[1] + " wheel " + quals[2];
        EXPECT_EQ(strip_positional(name), "wheel");
    }
}

TEST(UnifyLabels, DropsRareConceptsAndAssignsIdsInOrder) {
    std::vector<RawLabel> src = {raw("zebra", "a", Category::object, range(0, 12)),
                                 raw("apple", "a", Category::object, range(0, 10)),
                                 raw("rare", "a", Category::object, range(0, 9)),
                                 raw("kitchen", "a", Category::scene, range(0, 30)),
                                 raw("red", "gen", Category::color, range(0, 50))};
    auto r = unify_labels(src, {}, {}, 10);
    ASSERT_EQ(r.index.size(), 4u);
    EXPECT_EQ(r.index.concepts[0].name, "kitchen");
    EXPECT_EQ(r.index.concepts[1].name, "apple");
    EXPECT_EQ(r.index.concepts[2].name, "zebra");
    EXPECT_EQ(r.index.concepts[3].name, "red");
    for (std::size_t i = 0; i < r.index.size(); ++i) {
        EXPECT_EQ(r.index.concepts[i].id, i + 1);
        EXPECT_GE(r.index.concepts[i].sample_count, 10u);
    }
    EXPECT_FALSE(r.index.find("rare", Category::object));
    EXPECT_NO_THROW(r.index.validate());
}

TEST(UnifyLabels, CycleIsRejected) {
    SynonymTable syn = {{"a", "b"}, {"b", "c"}, {"c", "a"}};
    try {
        unify_labels({raw("a", "s", Category::object, {1})}, syn, {}, 1);
        FAIL() << "expected cycle error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("cyclic"), std::string::npos);
    }
}

TEST(UnifyLabels, DuplicateRawRecordRejected) {
    std::vector<RawLabel> src = {raw("car", "ade", Category::object, {1}), raw("car", "ade", Category::object, {2})};
    EXPECT_THROW(unify_labels(src, {}, {}, 1), Error);
}

TEST(UnifyLabels, PreconditionsEnforced) {
    EXPECT_THROW(unify_labels({}, {}, {}, 0), Error);
    EXPECT_THROW(unify_labels({raw("  ", "s", Category::object, {1})}, {}, {}, 1), Error);
}

TEST(UnifyLabels, CrossCategoryNameIsFlagged) {
    std::vector<RawLabel> src = {raw("door", "ade", Category::object, {1}), raw("door", "ade", Category::part, {2})};
    auto r = unify_labels(src, {}, {}, 1);
    EXPECT_EQ(r.index.size(), 2u);
    ASSERT_FALSE(r.diagnostics.empty());
    EXPECT_NE(r.diagnostics[0].find("door"), std::string::npos);
}

TEST(UnifyLabels, RandomizedInvariants) {
    std::mt19937_64 gen(11);
    const std::vector<std::string> words = {"car", "auto", "cat", "dog", "machine", "thing", "tree", "wheel"};
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<RawLabel> src;
        std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
        std::uniform_int_distribution<ImageId> img(0, 30);
        for (int k = 0; k < 12; ++k) {
            std::vector<ImageId> ids;
            for (int m = 0; m < 8; ++m) ids.push_back(img(gen));
            src.push_back(raw((k % 2 ? "left " : "") + words[pick(gen)], "s" + std::to_string(k), Category::object, ids));
        }
        SynonymTable syn = {{"auto", "car"}, {"machine", "car"}, {"thing", "tree"}};
        std::set<std::string> black = {"machine", "thing"};
        std::uint32_t min_samples = 1 + std::uint32_t(trial % 6);
        auto r = unify_labels(src, syn, black, min_samples);
        EXPECT_NO_THROW(r.index.validate());
        for (const auto& c : r.index.concepts) {
            EXPECT_GE(c.sample_count, min_samples);
            EXPECT_NE(c.name, "auto");  // always merged into car
        }
    }
}

TEST(TextTables, ParseSynonymsAndBlacklist) {
    std::istringstream syn("# comment\nauto\tcar\r\n\nkitty\tcat\n");
    auto t = parse_synonym_table(syn);
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.at("auto"), "car");
    std::istringstream bad("no tab here\n");
    EXPECT_THROW(parse_synonym_table(bad), Error);
    std::istringstream bl("machine\n  Object \n# skip\n\n");
    auto b = parse_blacklist(bl);
    EXPECT_EQ(b, (std::set<std::string>{"machine", "object"}));
    auto shipped = load_blacklist(std::string(NETDISSECT_SOURCE_DIR) + "/data/blacklist.txt");
    EXPECT_TRUE(shipped.count("machine"));
}

TEST(ConceptMask, PixelPlaneComparison) {
    ConceptIndex index;
    for (ConceptId id = 1; id <= 7; ++id) index.concepts.push_back({id, "o" + std::to_string(id), Category::object, 1});
    ImageRecord r;
    r.width = 2;
    r.height = 2;
    r.planes[category_index(Category::object)] = {{5, 0, 5, 7}};
    r.finalize(index);
    Mask m = concept_mask(r, index.at(5));
    EXPECT_EQ(m.data, (std::vector<std::uint8_t>{1, 0, 1, 0}));
    EXPECT_EQ(concept_mask(r, index.at(5)), m);  // deterministic
    EXPECT_EQ(count_true(concept_mask(r, index.at(3))), 0u);
}

TEST(ConceptMask, OverlappingPlanes) {
    ConceptIndex index;
    index.concepts = {{1, "cat", Category::object, 1}, {2, "leg", Category::part, 1}, {3, "eye", Category::part, 1}};
    ImageRecord r;
    r.width = 3;
    r.height = 1;
    r.planes[category_index(Category::part)] = {{2, 2, 0}, {3, 0, 2}};
    r.finalize(index);
    EXPECT_EQ(concept_mask(r, index.at(2)).data, (std::vector<std::uint8_t>{1, 1, 1}));
    EXPECT_EQ(concept_mask(r, index.at(3)).data, (std::vector<std::uint8_t>{1, 0, 0}));
    EXPECT_TRUE(r.present(Category::part));
    EXPECT_FALSE(r.present(Category::object));
}

TEST(ConceptMask, WholeImageLabels) {
    ConceptIndex index;
    index.concepts = {{1, "kitchen", Category::scene, 1}, {2, "street", Category::scene, 1}};
    ImageRecord r;
    r.width = 4;
    r.height = 3;
    r.whole_image_labels = {1};
    r.finalize(index);
    EXPECT_EQ(count_true(concept_mask(r, index.at(1))), 12u);
    EXPECT_EQ(count_true(concept_mask(r, index.at(2))), 0u);
    EXPECT_TRUE(r.present(Category::scene));
}

TEST(ImageRecord, FinalizeRejectsBadPlanes) {
    ConceptIndex index;
    index.concepts = {{1, "cat", Category::object, 1}, {2, "red", Category::color, 1}};
    ImageRecord r;
    r.width = 2;
    r.height = 2;
    r.planes[category_index(Category::object)] = {{1, 0, 0}};
    EXPECT_THROW(r.finalize(index), Error);
    r.planes[category_index(Category::object)] = {{2, 0, 0, 0}};  // color id on object plane
    EXPECT_THROW(r.finalize(index), Error);
    r.planes[category_index(Category::object)] = std::vector<LabelPlane>(5, LabelPlane(4, 1));
    EXPECT_THROW(r.finalize(index), Error);
}

TEST(ColorAnnotate, BlackImage) {
    auto lut = ColorLUT::nearest_prototype();
    RgbImage img(4, 5, Rgb{0, 0, 0});
    auto masks = color_annotate(img, lut);
    for (std::size_t k = 0; k < kColorCount; ++k)
        EXPECT_EQ(count_true(masks[k]), kColorNames[k] == "black" ? 20u : 0u) << kColorNames[k];
}

TEST(ColorAnnotate, HalfRedHalfBlue) {
    auto lut = ColorLUT::nearest_prototype();
    RgbImage img(2, 4);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 4; ++x) img(y, x) = x < 2 ? Rgb{255, 0, 0} : Rgb{0, 0, 255};
    auto masks = color_annotate(img, lut);
    auto idx = [](std::string_view n) { return std::size_t(std::find(kColorNames.begin(), kColorNames.end(), n) - kColorNames.begin()); };
    EXPECT_EQ(masks[idx("red")].data, (std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0}));
    EXPECT_EQ(masks[idx("blue")].data, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST(ColorAnnotate, MasksPartitionRandomImages) {
    auto lut = ColorLUT::nearest_prototype(5);
    std::mt19937_64 gen(5);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int trial = 0; trial < 20; ++trial) {
        RgbImage img(7, 9);
        for (auto& p : img.data) p = Rgb{std::uint8_t(byte(gen)), std::uint8_t(byte(gen)), std::uint8_t(byte(gen))};
        auto masks = color_annotate(img, lut);
        std::uint64_t total = 0;
        for (std::size_t p = 0; p < img.size(); ++p) {
            int on = 0;
            for (const auto& m : masks) on += m.data[p];
            EXPECT_EQ(on, 1);
        }
        for (const auto& m : masks) total += count_true(m);
        EXPECT_EQ(total, img.size());
    }
}

TEST(ColorLUT, ShippedFileRoundTrip) {
    auto shipped = ColorLUT::read(std::string(NETDISSECT_SOURCE_DIR) + "/data/color_lut_5bit.ndcl");
    auto ref = ColorLUT::nearest_prototype(5);
    EXPECT_EQ(shipped.bits(), 5u);
    EXPECT_EQ(shipped.table(), ref.table());
    auto dir = oracle::temp_dir("lut");
    std::filesystem::create_directories(dir);
    ref.write((dir / "x.ndcl").string());
    EXPECT_EQ(ColorLUT::read((dir / "x.ndcl").string()).table(), ref.table());
    std::filesystem::remove_all(dir);
    EXPECT_THROW(ColorLUT(5, std::vector<std::uint8_t>(10, 0)), Error);
}

TEST(Dataset, SaveLoadRoundTrip) {
    std::mt19937_64 gen(2);
    auto set = oracle::random_dataset(gen, 4, 5, 6, 8);
    auto dir = oracle::temp_dir("ds");
    set.save(dir);
    auto back = AnnotationSet::load(dir);
    EXPECT_NO_THROW(back.validate_all());
    ASSERT_EQ(back.size(), set.size());
    EXPECT_EQ(back.index().concepts, set.index().concepts);
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto a = set.record(i), b = back.record(i);
        EXPECT_EQ(a->planes, b->planes);
        EXPECT_EQ(a->whole_image_labels, b->whole_image_labels);
        EXPECT_EQ(a->category_present, b->category_present);
    }
    std::filesystem::remove_all(dir);
}

TEST(Dataset, LoadErrors) {
    EXPECT_THROW(AnnotationSet::load("/nonexistent/netdissect"), Error);
    std::mt19937_64 gen(2);
    auto set = oracle::random_dataset(gen, 2, 3, 3, 4);
    auto dir = oracle::temp_dir("dsbad");
    set.save(dir);
    for (auto& f : std::filesystem::directory_iterator(dir / "planes")) {
        std::filesystem::resize_file(f.path(), 5);
        break;
    }
    EXPECT_THROW(AnnotationSet::load(dir), Error);
    std::filesystem::remove_all(dir);
}
