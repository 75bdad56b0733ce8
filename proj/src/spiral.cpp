#include "diffma/spiral.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace diffma {

namespace {

struct Cell {
  int row;
  int col;
};

// Perimeter of the rectangle rows [top, bottom] x cols [left, right],
// starting at the top-left corner and winding clockwise.
std::vector<Cell> perimeter_clockwise(int top, int bottom, int left, int right) {
  std::vector<Cell> cells;
  if (top == bottom) {
    for (int c = left; c <= right; ++c) cells.push_back({top, c});
    return cells;
  }
  if (left == right) {
    for (int r = top; r <= bottom; ++r) cells.push_back({r, left});
    return cells;
  }
  for (int c = left; c <= right; ++c) cells.push_back({top, c});
  for (int r = top + 1; r <= bottom; ++r) cells.push_back({r, right});
  for (int c = right - 1; c >= left; --c) cells.push_back({bottom, c});
  for (int r = bottom - 1; r >= top + 1; --r) cells.push_back({r, left});
  return cells;
}

Cell corner_cell(Corner corner, int top, int bottom, int left, int right) {
  switch (corner) {
    case Corner::kTopLeft: return {top, left};
    case Corner::kTopRight: return {top, right};
    case Corner::kBottomRight: return {bottom, right};
    case Corner::kBottomLeft: return {bottom, left};
  }
  throw std::logic_error("unreachable corner");
}

// One boundary ring, walked from the scheme's corner in the scheme's winding
// direction. Degenerate rings (single row or column) are walked away from the
// corner's end of the line; chirality is immaterial for them.
std::vector<Cell> walk_ring(int top, int bottom, int left, int right,
                            Corner corner, Chirality chirality) {
  if (top == bottom || left == right) {
    std::vector<Cell> line = perimeter_clockwise(top, bottom, left, right);
    const bool corner_at_far_end =
        (top == bottom) ? (corner == Corner::kTopRight ||
                           corner == Corner::kBottomRight)
                        : (corner == Corner::kBottomRight ||
                           corner == Corner::kBottomLeft);
    if (corner_at_far_end) std::reverse(line.begin(), line.end());
    return line;
  }
  std::vector<Cell> cycle = perimeter_clockwise(top, bottom, left, right);
  if (chirality == Chirality::kCounterClockwise)
    std::reverse(cycle.begin(), cycle.end());
  const Cell start = corner_cell(corner, top, bottom, left, right);
  const auto it = std::find_if(cycle.begin(), cycle.end(), [&](const Cell& c) {
    return c.row == start.row && c.col == start.col;
  });
  std::rotate(cycle.begin(), it, cycle.end());
  return cycle;
}

}  // namespace

ScanScheme ScanScheme::from_id(int scheme_id, ScanMode mode) {
  if (scheme_id < 0 || scheme_id > 7)
    throw std::invalid_argument("scheme id must be in [0, 7]");
  ScanScheme s;
  s.corner = static_cast<Corner>(scheme_id / 2);
  s.chirality = static_cast<Chirality>(scheme_id % 2);
  s.mode = mode;
  return s;
}

std::string ScanScheme::describe() const {
  static const char* corners[] = {"top-left", "top-right", "bottom-right",
                                  "bottom-left"};
  std::ostringstream out;
  out << "scheme " << scheme_id() << " (" << corners[static_cast<int>(corner)]
      << ", "
      << (chirality == Chirality::kClockwise ? "clockwise" : "counterclockwise")
      << ", " << (mode == ScanMode::kForward ? "forward" : "reverse") << ")";
  return out.str();
}

Permutation build_spiral(int height, int width, const ScanScheme& scheme) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("spiral grid dimensions must be >= 1");

  Permutation p;
  p.height = height;
  p.width = width;
  p.order.reserve(static_cast<std::size_t>(height) * width);

  int top = 0, bottom = height - 1, left = 0, right = width - 1;
  while (top <= bottom && left <= right) {
    for (const Cell& c : walk_ring(top, bottom, left, right, scheme.corner,
                                   scheme.chirality)) {
      p.order.push_back(c.row * width + c.col);
    }
    ++top;
    --bottom;
    ++left;
    --right;
  }

  if (scheme.mode == ScanMode::kReverse)
    std::reverse(p.order.begin(), p.order.end());

  p.inverse.assign(p.order.size(), -1);
  for (int pos = 0; pos < p.size(); ++pos) p.inverse[p.order[pos]] = pos;
  return p;
}

SchemePair scheme_for_block(int block_index) {
  if (block_index < 0)
    throw std::invalid_argument("block index must be non-negative");
  const int id = block_index % 8;
  return {ScanScheme::from_id(id, ScanMode::kForward),
          ScanScheme::from_id(id, ScanMode::kReverse)};
}

const Permutation& cached_spiral(int height, int width,
                                 const ScanScheme& scheme) {
  using Key = std::tuple<int, int, int, int>;
  static std::map<Key, Permutation> cache;
  static std::mutex mu;
  const Key key{height, width, scheme.scheme_id(),
                static_cast<int>(scheme.mode)};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, build_spiral(height, width, scheme)).first;
  return it->second;
}

std::string render_scan_grid(const Permutation& p) {
  int widest = 1;
  for (int n = p.size() - 1; n >= 10; n /= 10) ++widest;
  std::ostringstream out;
  for (int r = 0; r < p.height; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const int rank = p.inverse[r * p.width + c];
      std::string s = std::to_string(rank);
      out << std::string(static_cast<std::size_t>(widest) - s.size(), ' ') << s;
      if (c + 1 < p.width) out << ' ';
    }
    out << '\n';
  }
  return out.str();
}

namespace detail {

void check_permutation_length(const Permutation& p, int sequence_length) {
  if (p.size() != sequence_length)
    throw std::invalid_argument(
        "permutation length " + std::to_string(p.size()) +
        " does not match sequence length " + std::to_string(sequence_length));
}

}  // namespace detail

}  // namespace diffma
