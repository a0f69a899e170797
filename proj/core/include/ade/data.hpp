#pragma once

#include "ade/vocabulary.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ade {

enum class Split { train, val, test };
enum class World { closed, open };

std::string to_string(Split split);
Split parse_split(const std::string& text);
std::string to_string(World world);
World parse_world(const std::string& text);

struct ImageRecord {
  std::string id;
  std::filesystem::path path;  // relative paths resolve against the manifest directory
  int attribute = 0;
  int object = 0;
  Split split = Split::train;

  Pair pair() const { return {attribute, object}; }
};

struct SplitSpec {
  std::set<Pair> seen;
  std::set<Pair> unseen_val;
  std::set<Pair> unseen_test;

  bool is_seen(const Pair& p) const { return seen.contains(p); }
  const std::set<Pair>& unseen_for(Split phase) const;

  // Closed world: seen plus the phase's unseen pairs; open world: A x O.
  // Train phase in the closed world uses every listed pair. Sorted.
  std::vector<Pair> candidates(World world, Split phase, const ConceptVocabulary& vocab) const;
};

struct Dataset {
  std::vector<ImageRecord> records;
  ConceptVocabulary vocab;
  SplitSpec split;
  std::filesystem::path root;

  std::vector<std::size_t> indices(Split s) const;
  std::filesystem::path image_path(const ImageRecord& r) const;
  const ImageRecord* find(const std::string& id) const;
};

// Path of the split sidecar belonging to a manifest: "x.jsonl" -> "x.split.json".
std::filesystem::path split_sidecar_path(const std::filesystem::path& manifest);

// Reads a JSON-lines manifest ({id, path, attribute, object, split} with
// names) and its split sidecar ({attributes, objects, unseen_val,
// unseen_test}). Seen pairs are the pairs of the train records. Throws
// DataError on unknown names, duplicate ids, train records of unseen pairs,
// and evaluation records whose pair is neither seen nor unseen for its split.
Dataset load_manifest(const std::filesystem::path& manifest);
void save_manifest(const Dataset& dataset, const std::filesystem::path& manifest);

// Target plus an attribute-sharing and an object-sharing partner, as record
// indices into Dataset::records.
struct PairSample {
  std::size_t target = 0;
  std::size_t attr_partner = 0;
  std::size_t obj_partner = 0;
};

// Draws partners from the train split. Partners whose other concept differs
// from the target's are preferred; then any other record sharing the concept;
// then the target itself. The draw is a pure function of (seed, epoch,
// target).
class PairSampler {
 public:
  PairSampler(const Dataset& dataset, std::uint64_t seed);

  PairSample sample(std::size_t target, std::uint64_t epoch) const;

  // Candidate pools, exposed for coverage tests.
  std::vector<std::size_t> attr_pool(std::size_t target, bool preferred) const;
  std::vector<std::size_t> obj_pool(std::size_t target, bool preferred) const;

 private:
  const Dataset* dataset_;
  std::uint64_t seed_;
  std::vector<std::vector<std::size_t>> by_attr_;
  std::vector<std::vector<std::size_t>> by_obj_;
};

struct SyntheticSpec {
  std::vector<std::string> colors{"red", "green", "blue", "yellow", "purple", "orange"};
  std::vector<std::string> shapes{"circle", "square", "triangle", "diamond", "cross"};
  int images_per_pair = 20;       // train images per seen pair
  int eval_images_per_pair = 10;  // val and test images per pair
  double unseen_fraction = 0.2;
  std::uint64_t seed = 0;
  int image_size = 32;
};

std::vector<std::string> synthetic_color_names();
std::vector<std::string> synthetic_shape_names();

// Renders filled shapes in named colors with seeded jitter and writes
// manifest.jsonl, manifest.split.json and images/ under `out_dir`. Unseen
// pairs are held out pair-wise so every color and shape keeps a seen pair;
// val and test take disjoint halves of them. Returns the loaded dataset.
Dataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace ade
