#include "ade/data.hpp"

#include "ade/errors.hpp"
#include "ade/image.hpp"
#include "ade/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

namespace ade {

namespace {

struct NamedColor {
  const char* name;
  std::array<int, 3> rgb;
};

constexpr NamedColor kColors[] = {
    {"red", {220, 40, 40}},    {"green", {40, 180, 60}},   {"blue", {50, 80, 225}},
    {"yellow", {235, 220, 40}}, {"purple", {150, 60, 190}}, {"orange", {245, 140, 30}},
    {"cyan", {40, 200, 215}},  {"white", {235, 235, 235}}, {"pink", {245, 120, 180}},
    {"brown", {135, 80, 40}},
};

// Shape membership in coordinates normalized by the shape radius, y down.
using ShapeTest = bool (*)(double, double);

bool in_triangle(double x, double y) {
  // Apex up, base at y = 0.8.
  constexpr double ax = 0.0, ay = -1.0, bx = 0.95, by = 0.8, cx = -0.95, cy = 0.8;
  auto edge = [](double x0, double y0, double x1, double y1, double px, double py) {
    return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
  };
  const double e0 = edge(ax, ay, bx, by, x, y);
  const double e1 = edge(bx, by, cx, cy, x, y);
  const double e2 = edge(cx, cy, ax, ay, x, y);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

struct NamedShape {
  const char* name;
  ShapeTest inside;
};

const NamedShape kShapes[] = {
    {"circle", [](double x, double y) { return x * x + y * y <= 1.0; }},
    {"square", [](double x, double y) { return std::abs(x) <= 0.82 && std::abs(y) <= 0.82; }},
    {"triangle", in_triangle},
    {"diamond", [](double x, double y) { return std::abs(x) + std::abs(y) <= 1.0; }},
    {"cross",
     [](double x, double y) {
       const double ax = std::abs(x), ay = std::abs(y);
       return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);
     }},
    {"ring",
     [](double x, double y) {
       const double r2 = x * x + y * y;
       return r2 <= 1.0 && r2 >= 0.3;
     }},
    {"bar", [](double x, double y) { return std::abs(x) <= 1.0 && std::abs(y) <= 0.38; }},
};

const NamedColor& color_by_name(const std::string& name) {
  for (const auto& c : kColors) {
    if (name == c.name) return c;
  }
  throw UsageError("unknown synthetic color '" + name + "'");
}

const NamedShape& shape_by_name(const std::string& name) {
  for (const auto& s : kShapes) {
    if (name == s.name) return s;
  }
  throw UsageError("unknown synthetic shape '" + name + "'");
}

RgbImage render(const NamedColor& color, const NamedShape& shape, int size, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double bg_level = 25.0 + 50.0 * unit(rng);
  const double cx = size * (0.38 + 0.24 * unit(rng));
  const double cy = size * (0.38 + 0.24 * unit(rng));
  const double radius = size * (0.22 + 0.1 * unit(rng));
  std::array<double, 3> fg{};
  for (int c = 0; c < 3; ++c) fg[c] = std::clamp(color.rgb[c] + 40.0 * (unit(rng) - 0.5), 0.0, 255.0);

  constexpr int kSuper = 4;
  RgbImage img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper;
          const double py = y + (sy + 0.5) / kSuper;
          if (shape.inside((px - cx) / radius, (py - cy) / radius)) ++hits;
        }
      }
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c) {
        const double bg = bg_level + 16.0 * (unit(rng) - 0.5);
        const double v = cover * fg[c] + (1.0 - cover) * bg;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return img;
}

// Picks the unseen pairs. A random covering set of max(|A|, |O|) pairs is
// kept seen so that every concept survives, then the holdout is drawn from
// the remainder.
std::vector<Pair> choose_unseen(int na, int no, std::size_t count, Rng& rng) {
  const std::size_t total = static_cast<std::size_t>(na) * no;
  const std::size_t cover = static_cast<std::size_t>(std::max(na, no));
  if (total - count < cover || count > total) {
    throw DataError("unseen fraction leaves an attribute or object without a seen pair (" +
                    std::to_string(count) + " of " + std::to_string(total) + " pairs held out)");
  }
  std::vector<int> pa(na), po(no);
  for (int i = 0; i < na; ++i) pa[i] = i;
  for (int i = 0; i < no; ++i) po[i] = i;
  std::shuffle(pa.begin(), pa.end(), rng);
  std::shuffle(po.begin(), po.end(), rng);
  std::set<Pair> kept;
  for (std::size_t k = 0; k < cover; ++k) kept.insert({pa[k % na], po[k % no]});

  std::vector<Pair> rest;
  for (int a = 0; a < na; ++a) {
    for (int o = 0; o < no; ++o) {
      if (!kept.contains({a, o})) rest.push_back({a, o});
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  rest.resize(count);
  return rest;
}

}  // namespace

std::vector<std::string> synthetic_color_names() {
  std::vector<std::string> out;
  for (const auto& c : kColors) out.emplace_back(c.name);
  return out;
}

std::vector<std::string> synthetic_shape_names() {
  std::vector<std::string> out;
  for (const auto& s : kShapes) out.emplace_back(s.name);
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.colors.size() < 2 || spec.shapes.size() < 2) {
    throw UsageError("synthetic dataset needs at least 2 colors and 2 shapes");
  }
  if (spec.images_per_pair < 1 || spec.eval_images_per_pair < 1) {
    throw UsageError("images per pair must be positive");
  }
  if (!(spec.unseen_fraction >= 0.0 && spec.unseen_fraction < 1.0)) {
    throw UsageError("unseen fraction must be in [0, 1)");
  }
  if (spec.image_size < 8) throw UsageError("synthetic image size must be at least 8");

  Dataset ds;
  ds.vocab.attributes = spec.colors;
  ds.vocab.objects = spec.shapes;
  ds.vocab.validate();
  std::vector<const NamedColor*> colors;
  std::vector<const NamedShape*> shapes;
  for (const auto& c : spec.colors) colors.push_back(&color_by_name(c));
  for (const auto& s : spec.shapes) shapes.push_back(&shape_by_name(s));

  const int na = ds.vocab.num_attributes();
  const int no = ds.vocab.num_objects();
  const std::size_t total = static_cast<std::size_t>(na) * no;
  const auto n_unseen = static_cast<std::size_t>(std::lround(spec.unseen_fraction * static_cast<double>(total)));
  Rng split_rng = keyed_rng(spec.seed, {rng_stream::kSynthetic, 0});
  const auto unseen = choose_unseen(na, no, n_unseen, split_rng);

  // Val takes the first ceil(n/2) held-out pairs, test the rest. A single
  // held-out pair is shared so both phases have an unseen class.
  const std::size_t n_val = (unseen.size() + 1) / 2;
  for (std::size_t i = 0; i < unseen.size(); ++i) {
    (i < n_val ? ds.split.unseen_val : ds.split.unseen_test).insert(unseen[i]);
  }
  if (unseen.size() == 1) ds.split.unseen_test.insert(unseen[0]);
  for (const auto& p : ds.vocab.all_pairs()) {
    if (!ds.split.unseen_val.contains(p) && !ds.split.unseen_test.contains(p)) ds.split.seen.insert(p);
  }

  std::filesystem::create_directories(out_dir / "images");
  ds.root = out_dir;
  auto emit = [&](Split split, const std::set<Pair>& pairs, int per_pair) {
    for (const auto& p : pairs) {
      const auto pair_index = static_cast<std::uint64_t>(p.attr) * no + p.obj;
      for (int k = 0; k < per_pair; ++k) {
        Rng rng = keyed_rng(spec.seed, {rng_stream::kSynthetic, 1, static_cast<std::uint64_t>(split), pair_index,
                                        static_cast<std::uint64_t>(k)});
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "%03d", k);
        ImageRecord r;
        r.id = to_string(split) + "_" + spec.colors[p.attr] + "_" + spec.shapes[p.obj] + "_" + suffix;
        r.path = std::filesystem::path("images") / (r.id + ".png");
        r.attribute = p.attr;
        r.object = p.obj;
        r.split = split;
        write_png(out_dir / r.path, render(*colors[p.attr], *shapes[p.obj], spec.image_size, rng));
        ds.records.push_back(std::move(r));
      }
    }
  };
  auto with_unseen = [&](const std::set<Pair>& extra) {
    std::set<Pair> s = ds.split.seen;
    s.insert(extra.begin(), extra.end());
    return s;
  };
  emit(Split::train, ds.split.seen, spec.images_per_pair);
  emit(Split::val, with_unseen(ds.split.unseen_val), spec.eval_images_per_pair);
  emit(Split::test, with_unseen(ds.split.unseen_test), spec.eval_images_per_pair);

  save_manifest(ds, out_dir / "manifest.jsonl");
  return ds;
}

}  // namespace ade
