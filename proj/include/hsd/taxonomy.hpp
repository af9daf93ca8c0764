#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>

namespace hsd {

inline constexpr int kNumClasses = 20;

// Human-parsing classes in the canonical listing order.
enum ClassId : std::uint8_t {
  kBackground = 0,
  kHat = 1,
  kHair = 2,
  kGlove = 3,
  kSunglasses = 4,
  kUpperClothes = 5,
  kDress = 6,
  kCoat = 7,
  kSocks = 8,
  kPants = 9,
  kSkin = 10,
  kScarf = 11,
  kSkirt = 12,
  kFace = 13,
  kLeftArm = 14,
  kRightArm = 15,
  kLeftLeg = 16,
  kRightLeg = 17,
  kLeftShoe = 18,
  kRightShoe = 19,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "background", "hat",   "hair",     "glove",     "sunglasses",
    "upper-clothes", "dress", "coat",  "socks",     "pants",
    "skin",       "scarf", "skirt",    "face",      "left-arm",
    "right-arm",  "left-leg", "right-leg", "left-shoe", "right-shoe"};

/// Set of class indices. Construction rejects indices outside the taxonomy.
class ClassSet {
 public:
  ClassSet() = default;
  ClassSet(std::initializer_list<int> ids);
  explicit ClassSet(std::span<const int> ids);

  static ClassSet all();

  bool contains(int id) const { return id >= 0 && id < kNumClasses && bits_.test(static_cast<std::size_t>(id)); }
  bool empty() const { return bits_.none(); }
  int size() const { return static_cast<int>(bits_.count()); }
  bool intersects(const ClassSet& other) const { return (bits_ & other.bits_).any(); }

  ClassSet operator|(const ClassSet& other) const;
  ClassSet operator&(const ClassSet& other) const;
  ClassSet operator~() const;
  bool operator==(const ClassSet& other) const = default;

 private:
  std::bitset<kNumClasses> bits_;
};

/// Region groupings used by masking, augmentation and alignment.
struct ClassTaxonomy {
  static constexpr int background_id = kBackground;
  static const ClassSet& head_group();
  static const ClassSet& body_group();
  static const ClassSet& neck_group();
  static std::string_view name(int id);
  /// Index for a class name; throws TaxonomyError when unknown.
  static int id_of(std::string_view name);
};

}  // namespace hsd
