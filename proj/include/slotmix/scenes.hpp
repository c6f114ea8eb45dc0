#pragma once

#include <string>
#include <vector>

#include "slotmix/eval.hpp"
#include "slotmix/matrix.hpp"
#include "slotmix/rng.hpp"

namespace slotmix {

// Point-cloud scene generator parameters. Feature layout per point:
// [x, y, color one-hot (colors) + channel noise, pure noise channels].
struct SceneSpec {
  int64_t max_objects = 6;
  int64_t points_per_object = 12;
  int64_t background_points = 24;  // filler so every scene has total_points()
  int64_t shapes = 3;              // disc, ring, square
  int64_t colors = 6;
  double size_min = 0.08;
  double size_max = 0.18;
  double noise = 0.02;           // point jitter and color channel noise
  double noise_channel_std = 0.5;
  int64_t noise_channels = 2;
  uint64_t seed = 0;

  int64_t feature_dim() const { return 2 + colors + noise_channels; }
  int64_t total_points() const { return max_objects * points_per_object + background_points; }
};

enum class ShapeKind : int64_t { Disc = 0, Ring = 1, Square = 2 };

struct SceneRecord {
  Mat features;             // N x feature_dim
  std::vector<int> labels;  // 0 = background, 1..n = object id
  std::vector<PropertyVector> targets;

  bool operator==(const SceneRecord& o) const;
};

// Objects drawn with pairwise center separation >= 2 * size_max; the object
// count is uniform in [1, max_objects] and unused object budget becomes extra
// background points, so N is constant across scenes.
SceneRecord gen_scene(const SceneSpec& spec, Rng& rng);

// Scene i uses an rng derived from (spec.seed, i); generation order does not
// matter.
std::vector<SceneRecord> gen_dataset(const SceneSpec& spec, int64_t count);

// JSON-lines, one scene per line, numbers printed with 17 significant digits
// for exact f64 round-trip.
void write_dataset(const std::vector<SceneRecord>& records, const std::string& path);
std::vector<SceneRecord> read_dataset(const std::string& path);

}  // namespace slotmix
