#include "fiberscope/object_class.hpp"

#include <algorithm>
#include <cctype>

namespace fiberscope {

std::optional<ObjectClass> class_from_index(int index) {
    if (index == 0) return ObjectClass::Fiber;
    if (index == 1) return ObjectClass::Vessel;
    return std::nullopt;
}

std::optional<ObjectClass> parse_class(std::string_view text) {
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c)))
            s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s.size() > 1 && s.back() == 's') s.pop_back();
    if (s == "fiber" || s == "fibre") return ObjectClass::Fiber;
    if (s == "vessel") return ObjectClass::Vessel;
    return std::nullopt;
}

}  // namespace fiberscope
