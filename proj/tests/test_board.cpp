#include <doctest.h>

#include <algorithm>
#include <set>

#include "patterncloth/board.hpp"
#include "patterncloth/errors.hpp"
#include "patterncloth/rng.hpp"

using namespace patterncloth;
using namespace patterncloth::board;

namespace {

Window random_window(Rng& rng, int n_colors) {
    Window w;
    for (auto& c : w) c = static_cast<ColorId>(rng.uniform_index(static_cast<std::uint64_t>(n_colors)));
    return w;
}

// Reference check, independent of canonical keys: are two windows equal up to
// some quarter-turn rotation of the first?
bool orbit_equal(const Window& a, const Window& b) {
    Window cur = a;
    for (int k = 0; k < 4; ++k) {
        if (cur == b) return true;
        cur = rotate90(cur);
    }
    return false;
}

Window rotate_n(Window w, int k) {
    for (int i = 0; i < k; ++i) w = rotate90(w);
    return w;
}

}  // namespace

TEST_CASE("rotate90 basic properties") {
    Window w = {0, 1, 2, 3, 4, 5, 6, 7, 8};
    // One clockwise quarter turn of the index grid.
    Window expect = {6, 3, 0, 7, 4, 1, 8, 5, 2};
    CHECK(rotate90(w) == expect);

    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        Window v = random_window(rng, 7);
        CHECK(rotate_n(v, 4) == v);
    }
}

TEST_CASE("canonical_window is the lexicographic minimum of the rotation orbit") {
    Rng rng(12);
    for (int t = 0; t < 500; ++t) {
        Window w = random_window(rng, 7);
        CodeKey key = canonical_window(w);
        // Reference: explicitly enumerate the orbit.
        Window best = w;
        for (int k = 1; k < 4; ++k) best = std::min(best, rotate_n(w, k));
        CHECK(key.canonical == best);
        CHECK(rotate_n(w, key.rotation) == key.canonical);
        // All rotations of w share the same canonical form.
        for (int k = 0; k < 4; ++k) CHECK(canonical_window(rotate_n(w, k)).canonical == best);
    }
}

TEST_CASE("generate_board satisfies constraints (independent brute-force scan)") {
    Board b = generate_board(12, 12, 7, 42);
    REQUIRE(b.rows == 12);
    REQUIRE(b.cols == 12);
    REQUIRE(b.cells.size() == 144);
    for (ColorId c : b.cells) CHECK(c < 7);

    // Adjacency: direct pairwise scan.
    for (int r = 0; r < b.rows; ++r)
        for (int c = 0; c < b.cols; ++c) {
            if (c + 1 < b.cols) CHECK(b.at(r, c) != b.at(r, c + 1));
            if (r + 1 < b.rows) CHECK(b.at(r + 1, c) != b.at(r, c));
        }

    // Window uniqueness: all-pairs over the orbit, no canonical keys involved.
    std::vector<Window> windows;
    for (int r = 1; r <= b.rows - 2; ++r)
        for (int c = 1; c <= b.cols - 2; ++c) windows.push_back(window_at(b, r, c));
    for (std::size_t i = 0; i < windows.size(); ++i)
        for (std::size_t j = i + 1; j < windows.size(); ++j) CHECK(!orbit_equal(windows[i], windows[j]));

    CHECK(verify_board(b).ok());
}

TEST_CASE("generate_board is deterministic in the seed") {
    Board a = generate_board(20, 20, 7, 7);
    Board b = generate_board(20, 20, 7, 7);
    Board c = generate_board(20, 20, 7, 8);
    CHECK(a.cells == b.cells);
    CHECK(a.cells != c.cells);
}

TEST_CASE("generate_board throws when the step budget is too small") {
    CHECK_THROWS_AS(generate_board(40, 40, 7, 1, /*step_budget=*/50), GenerationFailed);
}

TEST_CASE("codebook size matches the interior window count") {
    {
        Board b = generate_board(3, 3, 7, 1);
        CHECK(Codebook::build(b).n_entries() == 1);
    }
    {
        Board b = generate_board(60, 60, 7, 1);
        CHECK(Codebook::build(b).n_entries() == 58 * 58);
    }
}

TEST_CASE("lookup returns location and the rotation taking board window to query") {
    Board b = generate_board(40, 40, 7, 3);
    Codebook cb = Codebook::build(b);

    Window w = window_at(b, 10, 20);
    auto hit = cb.lookup(w);
    REQUIRE(hit.has_value());
    CHECK(hit->row == 10);
    CHECK(hit->col == 20);
    CHECK(hit->rotation == 0);

    Rng rng(99);
    for (int t = 0; t < 300; ++t) {
        const int r = 1 + static_cast<int>(rng.uniform_index(38));
        const int c = 1 + static_cast<int>(rng.uniform_index(38));
        const int k = static_cast<int>(rng.uniform_index(4));
        Window q = rotate_n(window_at(b, r, c), k);
        auto res = cb.lookup(q);
        REQUIRE(res.has_value());
        CHECK(res->row == r);
        CHECK(res->col == c);
        // Constructive check of the rotation convention.
        CHECK(rotate_n(window_at(b, res->row, res->col), res->rotation) == q);
    }
}

TEST_CASE("single-cell corruption is almost always rejected") {
    Board b = generate_board(60, 60, 7, 5);
    Codebook cb = Codebook::build(b);
    Rng rng(123);
    int rejected = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        const int r = 1 + static_cast<int>(rng.uniform_index(58));
        const int c = 1 + static_cast<int>(rng.uniform_index(58));
        Window w = window_at(b, r, c);
        const int cell = static_cast<int>(rng.uniform_index(9));
        const ColorId wrong =
            static_cast<ColorId>((w[static_cast<std::size_t>(cell)] + 1 + rng.uniform_index(6)) % 7);
        w[static_cast<std::size_t>(cell)] = wrong;
        auto res = cb.lookup(w);
        if (!res) {
            ++rejected;
        } else {
            // Any hit must be a true orbit collision with that board window.
            CHECK(rotate_n(window_at(b, res->row, res->col), res->rotation) == w);
        }
    }
    CHECK(rejected >= trials * 98 / 100);
}

TEST_CASE("verify_board reports violations on a hand-built bad board") {
    // Periodic coloring: distinct neighbors but repeating windows.
    Board b;
    b.rows = 4;
    b.cols = 12;
    b.n_colors = 5;
    b.cells.resize(48);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 12; ++c) b.at(r, c) = static_cast<ColorId>((r + 2 * c) % 5);
    VerifyReport rep = verify_board(b);
    CHECK(rep.adjacency_violations.empty());
    CHECK(!rep.duplicate_windows.empty());
    // Horizontal period five: (1,1) and (1,6) must land in one group.
    bool found = false;
    for (const auto& grp : rep.duplicate_windows) {
        const auto& cs = grp.centers;
        if (std::count(cs.begin(), cs.end(), std::pair<int, int>{1, 1}) &&
            std::count(cs.begin(), cs.end(), std::pair<int, int>{1, 6}))
            found = true;
    }
    CHECK(found);
    CHECK_THROWS_AS(Codebook::build(b), DuplicateKey);

    // An equal-colored adjacent pair is caught.
    Board g = generate_board(8, 8, 7, 2);
    g.at(3, 4) = g.at(3, 3);
    VerifyReport rep2 = verify_board(g);
    CHECK(!rep2.adjacency_violations.empty());
}
