#pragma once

#include <compare>
#include <string>
#include <vector>

namespace ade {

// An (attribute, object) composition, by vocabulary index.
struct Pair {
  int attr = 0;
  int obj = 0;

  auto operator<=>(const Pair&) const = default;
};

struct ConceptVocabulary {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;

  int num_attributes() const { return static_cast<int>(attributes.size()); }
  int num_objects() const { return static_cast<int>(objects.size()); }

  // Throws DataError for unknown names.
  int attribute_index(const std::string& name) const;
  int object_index(const std::string& name) const;

  // Full product A x O in attribute-major order.
  std::vector<Pair> all_pairs() const;
  bool contains(const Pair& p) const;
  std::string pair_name(const Pair& p) const;

  // Nonempty lists with unique names; throws DataError otherwise.
  void validate() const;
};

}  // namespace ade
