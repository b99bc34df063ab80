#pragma once

// Constructed id-map sequences for tracking tests.

#include <optional>
#include <vector>

#include "cleansplat/features.hpp"
#include "cleansplat/image.hpp"

namespace fixtures {

struct Square {
  std::uint16_t id;
  int x, y, size;
};

/// Wall (id 1) everywhere plus the given squares, later ones on top.
inline cleansplat::IdMap square_ids(int w, int h, const std::vector<Square>& squares) {
  cleansplat::IdMap ids{w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h, 1)};
  for (const auto& s : squares) {
    for (int y = s.y; y < s.y + s.size && y < h; ++y)
      for (int x = s.x; x < s.x + s.size && x < w; ++x)
        if (x >= 0 && y >= 0) ids.ids[static_cast<std::size_t>(y) * w + x] = s.id;
  }
  return ids;
}

inline cleansplat::BinaryMask id_mask(const cleansplat::IdMap& ids, std::uint16_t id) {
  cleansplat::BinaryMask m(ids.width, ids.height);
  for (std::size_t i = 0; i < ids.ids.size(); ++i) m.set(i, ids.ids[i] == id);
  return m;
}

}  // namespace fixtures
