#include "fiberscope/detection.hpp"

#include "fiberscope/error.hpp"

namespace fiberscope {

Detection Detection::from_mask(ObjectClass cls, double confidence, PlacedMask mask,
                               BoundingBox box) {
    mask = mask.trimmed();
    if (mask.count() == 0) throw EmptyGeometryError("detection mask is empty");
    Detection d;
    d.object_class = cls;
    d.confidence = confidence;
    d.contour = extract_contour(mask.local).translated(mask.x, mask.y);
    const PixelRect r = mask.window();
    d.box = box.valid() ? box : BoundingBox{double(r.x0), double(r.y0), double(r.x1), double(r.y1)};
    d.mask = std::move(mask);
    return d;
}

Detection Detection::translated(int dx, int dy) const {
    Detection d = *this;
    d.box = {box.x0 + dx, box.y0 + dy, box.x1 + dx, box.y1 + dy};
    d.mask = mask.translated(dx, dy);
    d.contour = contour.translated(dx, dy);
    return d;
}

bool confidence_order(const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x0 != b.box.x0) return a.box.x0 < b.box.x0;
    return a.box.y0 < b.box.y0;
}

}  // namespace fiberscope
