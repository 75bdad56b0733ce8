#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace diffma {

enum class Corner : int { kTopLeft = 0, kTopRight = 1, kBottomRight = 2, kBottomLeft = 3 };
enum class Chirality : int { kClockwise = 0, kCounterClockwise = 1 };
enum class ScanMode : int { kForward = 0, kReverse = 1 };

/// One of the eight spiral serialization schemes (4 starting corners x 2
/// winding directions), plus the traversal mode. scheme_id encodes
/// 2*corner + chirality.
struct ScanScheme {
  Corner corner = Corner::kTopLeft;
  Chirality chirality = Chirality::kClockwise;
  ScanMode mode = ScanMode::kForward;

  int scheme_id() const {
    return 2 * static_cast<int>(corner) + static_cast<int>(chirality);
  }

  static ScanScheme from_id(int scheme_id, ScanMode mode = ScanMode::kForward);

  std::string describe() const;
};

/// A bijective token ordering over an H x W grid together with its inverse.
/// order[p] is the row-major grid index visited at sequence position p;
/// inverse[g] is the sequence position of grid index g.
struct Permutation {
  int height = 0;
  int width = 0;
  std::vector<int> order;
  std::vector<int> inverse;

  int size() const { return static_cast<int>(order.size()); }
};

/// Builds the spiral traversal for `scheme` over an H x W grid. Forward mode
/// winds from the scheme's corner along the boundary inward; reverse mode is
/// the element-wise reversal (inside-out).
Permutation build_spiral(int height, int width, const ScanScheme& scheme);

/// Scheme assignment for block i: forward and reverse modes of scheme i % 8.
struct SchemePair {
  ScanScheme forward;
  ScanScheme reverse;
};
SchemePair scheme_for_block(int block_index);

/// Shared immutable cache keyed by (H, W, scheme id, mode). Permutations are
/// pure functions of their key; entries are built once and never mutated.
const Permutation& cached_spiral(int height, int width, const ScanScheme& scheme);

/// Renders the visit rank of every grid cell as a text matrix.
std::string render_scan_grid(const Permutation& p);

namespace detail {
/// Applies `order` to the rows of any indexable sequence; kept here so the
/// templated token helpers in model code and the int tests share one
/// implementation of the index checks.
void check_permutation_length(const Permutation& p, int sequence_length);
}  // namespace detail

}  // namespace diffma
