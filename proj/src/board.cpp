#include "patterncloth/board.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "patterncloth/errors.hpp"
#include "patterncloth/rng.hpp"

namespace patterncloth::board {

namespace {

// rotate90 index map: new[i][j] = old[2-j][i], flattened row-major.
constexpr std::array<int, 9> kRot90 = {6, 3, 0, 7, 4, 1, 8, 5, 2};

// Injective packing of a window into 7 bits per cell (requires n_colors <= 128).
std::uint64_t pack(const Window& w) {
    std::uint64_t key = 0;
    for (int i = 0; i < 9; ++i) key |= static_cast<std::uint64_t>(w[i]) << (7 * i);
    return key;
}

}  // namespace

Window rotate90(const Window& w) {
    Window out;
    for (int i = 0; i < 9; ++i) out[i] = w[kRot90[i]];
    return out;
}

CodeKey canonical_window(const Window& w) {
    CodeKey key{w, 0};
    Window cur = w;
    for (int k = 1; k < 4; ++k) {
        cur = rotate90(cur);
        if (cur < key.canonical) {
            key.canonical = cur;
            key.rotation = k;
        }
    }
    return key;
}

Window window_at(const Board& b, int r, int c) {
    if (r < 1 || r > b.rows - 2 || c < 1 || c > b.cols - 2)
        throw std::invalid_argument("window_at: center outside interior");
    Window w;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
            w[static_cast<std::size_t>(dr + 1) * 3 + (dc + 1)] = b.at(r + dr, c + dc);
    return w;
}

Board generate_board(int rows, int cols, int n_colors, std::uint64_t seed,
                     std::uint64_t step_budget) {
    if (rows < 3 || cols < 3) throw std::invalid_argument("generate_board: needs at least 3x3");
    if (n_colors < 4 || n_colors > 128)
        throw std::invalid_argument("generate_board: n_colors out of range [4,128]");

    Board b;
    b.rows = rows;
    b.cols = cols;
    b.n_colors = n_colors;
    b.cells.assign(static_cast<std::size_t>(rows) * cols, 0);

    const int total = rows * cols;
    Rng rng(seed);

    // Per-cell candidate order (freshly shuffled each time the cell is entered)
    // and the index of the next untried candidate.
    std::vector<std::array<ColorId, 128>> order(static_cast<std::size_t>(total));
    std::vector<int> next(static_cast<std::size_t>(total), 0);
    // Canonical key of the window completed by each cell, ~0 when none/open.
    constexpr std::uint64_t kNoKey = ~0ull;
    std::vector<std::uint64_t> completed(static_cast<std::size_t>(total), kNoKey);
    std::unordered_set<std::uint64_t> used;
    used.reserve(static_cast<std::size_t>(std::max(0, (rows - 2) * (cols - 2))));

    auto enter = [&](int pos) {
        auto& ord = order[static_cast<std::size_t>(pos)];
        for (int i = 0; i < n_colors; ++i) ord[static_cast<std::size_t>(i)] = static_cast<ColorId>(i);
        // Fisher-Yates with the deterministic engine.
        for (int i = n_colors - 1; i > 0; --i) {
            auto j = rng.uniform_index(static_cast<std::uint64_t>(i) + 1);
            std::swap(ord[static_cast<std::size_t>(i)], ord[j]);
        }
        next[static_cast<std::size_t>(pos)] = 0;
    };

    std::uint64_t steps = 0;
    int pos = 0;
    enter(0);
    while (pos < total) {
        const int r = pos / cols;
        const int c = pos % cols;
        bool placed = false;
        while (next[static_cast<std::size_t>(pos)] < n_colors) {
            const ColorId color =
                order[static_cast<std::size_t>(pos)][static_cast<std::size_t>(next[static_cast<std::size_t>(pos)]++)];
            if (++steps > step_budget)
                throw GenerationFailed("board generation exceeded step budget");
            if (c > 0 && b.at(r, c - 1) == color) continue;
            if (r > 0 && b.at(r - 1, c) == color) continue;
            std::uint64_t key = kNoKey;
            if (r >= 2 && c >= 2) {
                // Raster order completes exactly the window centered at (r-1, c-1).
                b.at(r, c) = color;
                key = pack(canonical_window(window_at(b, r - 1, c - 1)).canonical);
                if (used.count(key)) continue;
            }
            b.at(r, c) = color;
            if (key != kNoKey) used.insert(key);
            completed[static_cast<std::size_t>(pos)] = key;
            placed = true;
            break;
        }
        if (placed) {
            ++pos;
            if (pos < total) enter(pos);
        } else {
            --pos;
            if (pos < 0) throw GenerationFailed("board generation backtracked past start");
            if (completed[static_cast<std::size_t>(pos)] != kNoKey) {
                used.erase(completed[static_cast<std::size_t>(pos)]);
                completed[static_cast<std::size_t>(pos)] = kNoKey;
            }
        }
    }
    return b;
}

VerifyReport verify_board(const Board& b) {
    VerifyReport rep;
    for (int r = 0; r < b.rows; ++r)
        for (int c = 0; c < b.cols; ++c) {
            if (c + 1 < b.cols && b.at(r, c) == b.at(r, c + 1))
                rep.adjacency_violations.push_back({r, c, r, c + 1});
            if (r + 1 < b.rows && b.at(r, c) == b.at(r + 1, c))
                rep.adjacency_violations.push_back({r, c, r + 1, c});
        }
    std::unordered_map<std::uint64_t, std::vector<std::pair<int, int>>> seen;
    for (int r = 1; r <= b.rows - 2; ++r)
        for (int c = 1; c <= b.cols - 2; ++c)
            seen[pack(canonical_window(window_at(b, r, c)).canonical)].push_back({r, c});
    for (auto& [key, centers] : seen)
        if (centers.size() > 1) {
            std::sort(centers.begin(), centers.end());
            rep.duplicate_windows.push_back({centers});
        }
    std::sort(rep.duplicate_windows.begin(), rep.duplicate_windows.end(),
              [](const auto& a, const auto& bb) { return a.centers.front() < bb.centers.front(); });
    return rep;
}

Codebook Codebook::build(const Board& b) {
    Codebook cb;
    cb.rows_ = b.rows;
    cb.cols_ = b.cols;
    cb.n_colors_ = b.n_colors;
    cb.map_.reserve(static_cast<std::size_t>(std::max(0, (b.rows - 2) * (b.cols - 2))));
    for (int r = 1; r <= b.rows - 2; ++r)
        for (int c = 1; c <= b.cols - 2; ++c) {
            const CodeKey key = canonical_window(window_at(b, r, c));
            auto [it, inserted] = cb.map_.emplace(pack(key.canonical), CodebookEntry{r, c, key.rotation});
            if (!inserted)
                throw DuplicateKey("codebook: windows at (" + std::to_string(it->second.row) + "," +
                                   std::to_string(it->second.col) + ") and (" + std::to_string(r) + "," +
                                   std::to_string(c) + ") share a canonical key");
        }
    return cb;
}

std::optional<LookupResult> Codebook::lookup(const Window& w) const {
    const CodeKey key = canonical_window(w);
    const auto it = map_.find(pack(key.canonical));
    if (it == map_.end()) return std::nullopt;
    // stored: rot^{rs}(board) == canonical == rot^{rq}(query)
    // => query == rot^{rs-rq}(board window)
    return LookupResult{it->second.row, it->second.col, ((it->second.rotation - key.rotation) % 4 + 4) % 4};
}

}  // namespace patterncloth::board
