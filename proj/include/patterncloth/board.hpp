#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

namespace patterncloth::board {

using ColorId = std::uint8_t;

// A 3x3 patch of colors in row-major order.
using Window = std::array<ColorId, 9>;

// Colored cell grid. Every pair of edge-adjacent cells differs in color and
// every 3x3 window is unique across the board up to quarter-turn rotations.
struct Board {
    int rows = 0;
    int cols = 0;
    int n_colors = 7;
    double cell_size_mm = 2.7;
    std::vector<ColorId> cells;  // row-major, rows*cols

    ColorId at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
    ColorId& at(int r, int c) { return cells[static_cast<std::size_t>(r) * cols + c]; }
};

struct CodeKey {
    Window canonical;  // lexicographically smallest among the 4 rotations
    int rotation = 0;  // quarter-turns applied to the input to reach canonical
};

struct CodebookEntry {
    int row = 0;
    int col = 0;
    int rotation = 0;  // quarter-turns canonicalizing the stored board window
};

struct LookupResult {
    int row = 0;
    int col = 0;
    // Quarter-turns k such that query == rotate^k(board window at (row, col)).
    int rotation = 0;
};

// Inverse map from canonical 3x3 windows to board locations. Immutable after
// construction; safe for concurrent reads.
class Codebook {
public:
    static Codebook build(const Board& b);  // throws DuplicateKey on violation

    std::optional<LookupResult> lookup(const Window& w) const;
    std::size_t n_entries() const { return map_.size(); }
    int board_rows() const { return rows_; }
    int board_cols() const { return cols_; }
    int n_colors() const { return n_colors_; }

private:
    std::unordered_map<std::uint64_t, CodebookEntry> map_;
    int rows_ = 0;
    int cols_ = 0;
    int n_colors_ = 0;
};

struct VerifyReport {
    struct AdjacencyViolation {
        int r0, c0, r1, c1;  // the two equal-colored edge-adjacent cells
    };
    struct DuplicateGroup {
        std::vector<std::pair<int, int>> centers;  // window centers sharing a canonical key
    };
    std::vector<AdjacencyViolation> adjacency_violations;
    std::vector<DuplicateGroup> duplicate_windows;

    bool ok() const { return adjacency_violations.empty() && duplicate_windows.empty(); }
};

Window rotate90(const Window& w);
CodeKey canonical_window(const Window& w);

// 3x3 block centered at (r, c); requires 1 <= r <= rows-2, 1 <= c <= cols-2.
Window window_at(const Board& b, int r, int c);

// Randomized raster-order greedy assignment with bounded backtracking.
// Deterministic for a fixed seed. Throws GenerationFailed when the step
// budget is exhausted.
Board generate_board(int rows, int cols, int n_colors, std::uint64_t seed,
                     std::uint64_t step_budget = 1000000);

VerifyReport verify_board(const Board& b);

}  // namespace patterncloth::board
