#include <doctest.h>

#include <map>
#include <set>

#include "specsim/error.hpp"
#include "specsim/oslayout.hpp"

using namespace specsim;

TEST_CASE("linux layout shape") {
    using namespace linux_kaslr;
    for (uint64_t seed : {0ull, 1ull, 77ull, 123456789ull}) {
        const auto [l, map] = randomize_linux(seed);
        CAPTURE(seed);
        CHECK(l.os == OsKind::Linux);
        CHECK(l.entropy_bits == 9);
        REQUIRE(l.kernel_image_pages.size() == kDefaultImagePages);
        CHECK(l.module_pages.size() == kDefaultModulePages);
        CHECK(l.decoy_pages.empty());
        for (size_t i = 0; i < l.kernel_image_pages.size(); ++i) {
            const uint64_t b = l.kernel_image_pages[i];
            CHECK(b % kPage2M == 0);
            CHECK(b >= kImageStart);
            CHECK(b + kPage2M <= kImageEnd);
            if (i) CHECK(b == l.kernel_image_pages[i - 1] + kPage2M);
        }
        CHECK(l.image_base() == kImageStart + l.image_slot * kPage2M);
        CHECK(l.module_offset >= 1);
        CHECK(l.module_offset <= kMaxModuleOffset);
        CHECK(l.module_pages.front() == kModuleStart + l.module_offset * kPage4K);
        CHECK(l.module_pages.back() + kPage4K <= kModuleWindowEnd);
        REQUIRE(l.search_ranges.size() == 2);
        CHECK(l.search_ranges[0].count() == 512);
        CHECK(l.search_ranges[1].count() == 3072);
        for (auto b : l.kernel_image_pages) {
            CHECK(map.find(b)->size == kPage2M);
            CHECK(map.find(b)->entry.kernel);
        }
        CHECK(map.page_count() == kDefaultImagePages + kDefaultModulePages);
    }
    CHECK_THROWS_AS(randomize_linux(1, 0), ConfigError);
    CHECK_THROWS_AS(randomize_linux(1, 513), ConfigError);
    CHECK_THROWS_AS(randomize_linux(1, 11, 3000), ConfigError);
}

TEST_CASE("linux image slots cover the whole range") {
    std::set<uint64_t> slots;
    for (uint64_t seed = 0; seed < 1000; ++seed) slots.insert(randomize_linux(seed).first.image_slot);
    CHECK(slots.size() > 400);
    CHECK(*slots.rbegin() <= linux_kaslr::kImageSlots - linux_kaslr::kDefaultImagePages);
}

TEST_CASE("windows layout shape") {
    using namespace windows_kaslr;
    for (uint64_t seed : {0ull, 5ull, 999ull}) {
        const auto [l, map] = randomize_windows(seed);
        CHECK(l.entropy_bits == 18);
        REQUIRE(l.kernel_image_pages.size() == kDefaultImageSlots);
        CHECK(l.decoy_pages.empty());
        CHECK(l.module_pages.empty());
        CHECK(map.page_count() == kDefaultImageSlots);
        CHECK(l.image_base() >= kStart);
        CHECK(l.kernel_image_pages.back() + kPage2M <= kEnd);
        REQUIRE(l.search_ranges.size() == 1);
        CHECK(l.search_ranges[0].count() == kSlots);
    }
}

TEST_CASE("windows decoys never form a second image-sized run") {
    using namespace windows_kaslr;
    WindowsLayoutOptions o;
    o.decoys = true;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const auto [l, map] = randomize_windows(seed, o);
        CAPTURE(seed);
        CHECK_FALSE(l.decoy_pages.empty());
        const auto truth = ground_truth(l);
        CHECK(truth.size() == l.kernel_image_pages.size() + l.decoy_pages.size());
        // Lengths of the maximal runs of consecutive slots.
        std::map<uint64_t, uint64_t> runs;
        uint64_t start = truth.front(), len = 1;
        for (size_t i = 1; i <= truth.size(); ++i) {
            if (i < truth.size() && truth[i] == truth[i - 1] + kPage2M) {
                ++len;
                continue;
            }
            runs[start] = len;
            if (i < truth.size()) start = truth[i], len = 1;
        }
        CHECK(runs.at(l.image_base()) == kDefaultImageSlots);
        for (const auto& [s, n] : runs)
            if (s != l.image_base()) CHECK(n <= 4);
    }
}

TEST_CASE("layouts are deterministic per seed") {
    CHECK(randomize_linux(42).first == randomize_linux(42).first);
    CHECK(randomize_linux(42).second == randomize_linux(42).second);
    WindowsLayoutOptions o;
    o.decoys = true;
    CHECK(randomize_windows(42, o).first == randomize_windows(42, o).first);
    CHECK_FALSE(randomize_linux(42).first == randomize_linux(43).first);
}

TEST_CASE("ground truth equals the mapped pages") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        WindowsLayoutOptions o;
        o.decoys = seed % 2;
        for (const auto& [l, map] : {randomize_linux(seed), randomize_windows(seed, o)}) {
            std::vector<uint64_t> pages;
            for (const auto& p : map.pages()) pages.push_back(p.base);
            CHECK(pages == ground_truth(l));
            CHECK(build_memory_map(l) == map);
        }
    }
}

TEST_CASE("layout JSON round-trip and errors") {
    WindowsLayoutOptions o;
    o.decoys = true;
    for (const auto& l : {randomize_linux(3).first, randomize_windows(3, o).first}) {
        const auto text = layout_to_json(l);
        CHECK(layout_from_json(text) == l);
        CHECK(layout_to_json(layout_from_json(text)) == text);
    }
    CHECK_THROWS_AS(layout_from_json("{"), ConfigError);
    CHECK_THROWS_AS(layout_from_json("{}"), ConfigError);
    CHECK_THROWS_AS(layout_from_json(R"({"schema":"other"})"), ConfigError);
    auto text = layout_to_json(randomize_linux(3).first);
    text.replace(text.find("\"linux\""), 7, "\"beos\"");
    CHECK_THROWS_AS(layout_from_json(text), ConfigError);
    CHECK(parse_os("windows") == OsKind::Windows);
    CHECK_THROWS_AS(parse_os("macos"), ConfigError);
}

TEST_CASE("uniform_below") {
    uint64_t state = 1;
    std::map<uint64_t, int> counts;
    for (int i = 0; i < 60000; ++i) {
        const uint64_t v = uniform_below(6, state);
        REQUIRE(v < 6);
        ++counts[v];
    }
    for (const auto& [v, c] : counts) CHECK(std::abs(c - 10000) < 500);
    uint64_t a = 9, b = 9;
    for (int i = 0; i < 100; ++i) CHECK(uniform_below(1000003, a) == uniform_below(1000003, b));
    CHECK(uniform_below(1, a) == 0);
    CHECK_THROWS(uniform_below(0, a));
}
