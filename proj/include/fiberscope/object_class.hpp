#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace fiberscope {

/// Index order is the label-file class index: fiber=0, vessel=1.
enum class ObjectClass : int { Fiber = 0, Vessel = 1 };

inline constexpr int kNumClasses = 2;
inline constexpr std::array<ObjectClass, kNumClasses> kAllClasses{ObjectClass::Fiber,
                                                                  ObjectClass::Vessel};

constexpr int class_index(ObjectClass c) { return static_cast<int>(c); }

constexpr std::string_view class_name(ObjectClass c) {
    return c == ObjectClass::Fiber ? "fiber" : "vessel";
}

std::optional<ObjectClass> class_from_index(int index);

/// Case-insensitive; accepts singular and plural forms ("Fibers", "vessel").
std::optional<ObjectClass> parse_class(std::string_view text);

}  // namespace fiberscope
