#include "hsd/taxonomy.hpp"

#include <string>

#include "hsd/errors.hpp"

namespace hsd {

namespace {

void check_id(int id) {
  if (id < 0 || id >= kNumClasses) {
    throw TaxonomyError("class index " + std::to_string(id) + " outside [0, " + std::to_string(kNumClasses) + ")");
  }
}

}  // namespace

ClassSet::ClassSet(std::initializer_list<int> ids) {
  for (int id : ids) {
    check_id(id);
    bits_.set(static_cast<std::size_t>(id));
  }
}

ClassSet::ClassSet(std::span<const int> ids) {
  for (int id : ids) {
    check_id(id);
    bits_.set(static_cast<std::size_t>(id));
  }
}

ClassSet ClassSet::all() {
  ClassSet s;
  s.bits_.set();
  return s;
}

ClassSet ClassSet::operator|(const ClassSet& other) const {
  ClassSet s;
  s.bits_ = bits_ | other.bits_;
  return s;
}

ClassSet ClassSet::operator&(const ClassSet& other) const {
  ClassSet s;
  s.bits_ = bits_ & other.bits_;
  return s;
}

ClassSet ClassSet::operator~() const {
  ClassSet s;
  s.bits_ = ~bits_;
  return s;
}

const ClassSet& ClassTaxonomy::head_group() {
  static const ClassSet g{kHat, kHair, kSunglasses, kFace};
  return g;
}

const ClassSet& ClassTaxonomy::body_group() {
  static const ClassSet g{kGlove,    kUpperClothes, kDress,   kCoat,     kSocks,    kPants,    kScarf,
                          kSkirt,    kLeftArm,      kRightArm, kLeftLeg, kRightLeg, kLeftShoe, kRightShoe};
  return g;
}

const ClassSet& ClassTaxonomy::neck_group() {
  static const ClassSet g{kSkin};
  return g;
}

std::string_view ClassTaxonomy::name(int id) {
  check_id(id);
  return kClassNames[static_cast<std::size_t>(id)];
}

int ClassTaxonomy::id_of(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
  }
  throw TaxonomyError("unknown class name '" + std::string(name) + "'");
}

}  // namespace hsd
