#include "mtm/boxes.hpp"

#include "mtm/errors.hpp"

namespace mtm {

void BoxSet::validate() const {
  if (classes.size() != boxes.size() || (!scores.empty() && scores.size() != boxes.size())) {
    throw ContractError("BoxSet: boxes, classes and scores must have equal lengths");
  }
  constexpr double slack = 1e-9;
  for (const Box& b : boxes) {
    if (!(b.w > 0.0 && b.h > 0.0)) throw ContractError("BoxSet: box width and height must be positive");
    if (b.x0() < -slack || b.y0() < -slack || b.x1() > 1.0 + slack || b.y1() > 1.0 + slack) {
      throw ContractError("BoxSet: box extends outside the unit square");
    }
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("BoxSet: score outside [0, 1]");
  }
}

BoxSet flip_horizontal(const BoxSet& set) {
  BoxSet out = set;
  for (Box& b : out.boxes) b.cx = 1.0 - b.cx;
  return out;
}

}  // namespace mtm
