#pragma once

#include <vector>

#include "fiberscope/geometry.hpp"
#include "fiberscope/object_class.hpp"

namespace fiberscope {

/// One detected instance in image coordinates. Masks of different detections
/// may overlap: translucent objects each keep their full extent.
struct Detection {
    ObjectClass object_class = ObjectClass::Fiber;
    double confidence = 0.0;
    BoundingBox box;
    PlacedMask mask;
    Polygon contour{{{0, 0}, {1, 0}, {1, 1}}};

    /// Builds a detection from a mask, deriving the contour and, when `box`
    /// is not valid, a tight box. Throws EmptyGeometryError on empty masks.
    static Detection from_mask(ObjectClass cls, double confidence, PlacedMask mask,
                               BoundingBox box = {});

    Detection translated(int dx, int dy) const;
};

/// Confidence descending, then box x0, then y0.
bool confidence_order(const Detection& a, const Detection& b);

}  // namespace fiberscope
