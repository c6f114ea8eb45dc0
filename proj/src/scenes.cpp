#include "slotmix/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "slotmix/tensor.hpp"  // ContractError

namespace slotmix {

bool SceneRecord::operator==(const SceneRecord& o) const {
  if (features.rows != o.features.rows || features.cols != o.features.cols) return false;
  if (features.d != o.features.d || labels != o.labels) return false;
  if (targets.size() != o.targets.size()) return false;
  for (size_t i = 0; i < targets.size(); ++i) {
    const auto& a = targets[i];
    const auto& b = o.targets[i];
    if (a.x != b.x || a.y != b.y || a.size != b.size || a.presence != b.presence ||
        a.shape != b.shape || a.color != b.color)
      return false;
  }
  return true;
}

SceneRecord gen_scene(const SceneSpec& spec, Rng& rng) {
  if (spec.max_objects < 1 || spec.points_per_object < 1 || spec.colors < 1 ||
      spec.shapes < 1 || spec.shapes > 3 || spec.size_min > spec.size_max)
    throw ContractError("gen_scene: invalid SceneSpec");

  const int64_t n_obj = 1 + rng.uniform_int(spec.max_objects);
  const double margin = 1.5 * spec.size_max;
  const double min_sep = 2.0 * spec.size_max;

  // Rejection-sample non-overlapping centers.
  std::vector<std::pair<double, double>> centers;
  int64_t tries = 0;
  while (static_cast<int64_t>(centers.size()) < n_obj) {
    if (++tries > 10000)
      throw ContractError("gen_scene: center rejection sampling failed (spec too dense)");
    const double cx = rng.uniform(-1.0 + margin, 1.0 - margin);
    const double cy = rng.uniform(-1.0 + margin, 1.0 - margin);
    bool ok = true;
    for (auto [px, py] : centers) {
      const double dx = cx - px, dy = cy - py;
      if (dx * dx + dy * dy < min_sep * min_sep) {
        ok = false;
        break;
      }
    }
    if (ok) centers.emplace_back(cx, cy);
  }

  const int64_t d = spec.feature_dim();
  const int64_t n_total = spec.total_points();
  const int64_t n_background = n_total - n_obj * spec.points_per_object;

  SceneRecord rec;
  rec.features = Mat(n_total, d);
  rec.labels.assign(static_cast<size_t>(n_total), 0);

  int64_t row = 0;
  auto fill_common = [&](int64_t r, double px, double py, int64_t color) {
    rec.features(r, 0) = px;
    rec.features(r, 1) = py;
    for (int64_t c = 0; c < spec.colors; ++c)
      rec.features(r, 2 + c) = (c == color ? 1.0 : 0.0) + rng.gaussian(0.0, spec.noise);
    for (int64_t c = 0; c < spec.noise_channels; ++c)
      rec.features(r, 2 + spec.colors + c) = rng.gaussian(0.0, spec.noise_channel_std);
  };

  for (int64_t o = 0; o < n_obj; ++o) {
    const auto [cx, cy] = centers[static_cast<size_t>(o)];
    const double size = rng.uniform(spec.size_min, spec.size_max);
    const auto shape = static_cast<ShapeKind>(rng.uniform_int(spec.shapes));
    const int64_t color = rng.uniform_int(spec.colors);

    for (int64_t p = 0; p < spec.points_per_object; ++p) {
      double px = cx, py = cy;
      switch (shape) {
        case ShapeKind::Disc:
          px += rng.gaussian(0.0, 0.5 * size);
          py += rng.gaussian(0.0, 0.5 * size);
          break;
        case ShapeKind::Ring: {
          const double a = rng.uniform(0.0, 2.0 * M_PI);
          px += size * std::cos(a) + rng.gaussian(0.0, spec.noise);
          py += size * std::sin(a) + rng.gaussian(0.0, spec.noise);
          break;
        }
        case ShapeKind::Square: {
          // Perimeter point: bottom/top edges for sides 0/1, left/right for 2/3.
          const int64_t side = rng.uniform_int(4);
          const double t = rng.uniform(-size, size);
          const double sx = side == 2 ? -size : side == 3 ? size : t;
          const double sy = side == 0 ? -size : side == 1 ? size : t;
          px += sx + rng.gaussian(0.0, spec.noise);
          py += sy + rng.gaussian(0.0, spec.noise);
          break;
        }
      }
      fill_common(row, px, py, color);
      rec.labels[static_cast<size_t>(row)] = static_cast<int>(o + 1);
      ++row;
    }

    PropertyVector pv;
    pv.x = cx;
    pv.y = cy;
    pv.size = spec.size_max > spec.size_min
                  ? (size - spec.size_min) / (spec.size_max - spec.size_min)
                  : 0.0;
    pv.shape.assign(static_cast<size_t>(spec.shapes), 0.0);
    pv.shape[static_cast<size_t>(shape)] = 1.0;
    pv.color.assign(static_cast<size_t>(spec.colors), 0.0);
    pv.color[static_cast<size_t>(color)] = 1.0;
    pv.presence = 1.0;
    rec.targets.push_back(std::move(pv));
  }

  for (int64_t b = 0; b < n_background; ++b) {
    const double px = rng.uniform(-1.0, 1.0);
    const double py = rng.uniform(-1.0, 1.0);
    fill_common(row, px, py, -1);  // background keeps the all-zeros color block
    ++row;
  }

  // Shuffle points so object membership is not positional.
  std::vector<int64_t> perm(static_cast<size_t>(n_total));
  for (int64_t i = 0; i < n_total; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  Mat shuffled(n_total, d);
  std::vector<int> labels(static_cast<size_t>(n_total));
  for (int64_t i = 0; i < n_total; ++i) {
    const int64_t src = perm[static_cast<size_t>(i)];
    for (int64_t c = 0; c < d; ++c) shuffled(i, c) = rec.features(src, c);
    labels[static_cast<size_t>(i)] = rec.labels[static_cast<size_t>(src)];
  }
  rec.features = std::move(shuffled);
  rec.labels = std::move(labels);
  return rec;
}

std::vector<SceneRecord> gen_dataset(const SceneSpec& spec, int64_t count) {
  std::vector<SceneRecord> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(i)));
    out.push_back(gen_scene(spec, rng));
  }
  return out;
}

namespace {

void append_num(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  s += buf;
}

void append_row(std::string& s, const double* row, int64_t n) {
  s += '[';
  for (int64_t i = 0; i < n; ++i) {
    if (i) s += ',';
    append_num(s, row[i]);
  }
  s += ']';
}

}  // namespace

void write_dataset(const std::vector<SceneRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("write_dataset: cannot open " + path);
  std::string line;
  for (const auto& rec : records) {
    line.clear();
    line += "{\"features\":[";
    for (int64_t i = 0; i < rec.features.rows; ++i) {
      if (i) line += ',';
      append_row(line, rec.features.row(i), rec.features.cols);
    }
    line += "],\"labels\":[";
    for (size_t i = 0; i < rec.labels.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(rec.labels[i]);
    }
    line += "],\"targets\":[";
    for (size_t i = 0; i < rec.targets.size(); ++i) {
      if (i) line += ',';
      const auto& t = rec.targets[i];
      line += "{\"x\":";
      append_num(line, t.x);
      line += ",\"y\":";
      append_num(line, t.y);
      line += ",\"size\":";
      append_num(line, t.size);
      line += ",\"shape\":";
      append_row(line, t.shape.data(), static_cast<int64_t>(t.shape.size()));
      line += ",\"color\":";
      append_row(line, t.color.data(), static_cast<int64_t>(t.color.size()));
      line += ",\"presence\":";
      append_num(line, t.presence);
      line += "}";
    }
    line += "]}\n";
    f << line;
  }
  if (!f) throw ContractError("write_dataset: write failed for " + path);
}

std::vector<SceneRecord> read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("read_dataset: cannot open " + path);
  std::vector<SceneRecord> out;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      SceneRecord rec;
      const auto& feats = j.at("features");
      rec.features.rows = static_cast<int64_t>(feats.size());
      rec.features.cols = feats.empty() ? 0 : static_cast<int64_t>(feats[0].size());
      rec.features.d.reserve(static_cast<size_t>(rec.features.rows * rec.features.cols));
      for (const auto& r : feats) {
        if (static_cast<int64_t>(r.size()) != rec.features.cols)
          throw ContractError("ragged feature rows");
        for (const auto& v : r) rec.features.d.push_back(v.get<double>());
      }
      for (const auto& v : j.at("labels")) rec.labels.push_back(v.get<int>());
      if (static_cast<int64_t>(rec.labels.size()) != rec.features.rows)
        throw ContractError("labels/features length mismatch");
      for (const auto& t : j.at("targets")) {
        PropertyVector pv;
        pv.x = t.at("x").get<double>();
        pv.y = t.at("y").get<double>();
        pv.size = t.at("size").get<double>();
        for (const auto& v : t.at("shape")) pv.shape.push_back(v.get<double>());
        for (const auto& v : t.at("color")) pv.color.push_back(v.get<double>());
        pv.presence = t.at("presence").get<double>();
        rec.targets.push_back(std::move(pv));
      }
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw ContractError("read_dataset: parse error near byte " + std::to_string(offset) +
                          " of " + path + ": " + e.what());
    }
    offset += line.size() + 1;
  }
  return out;
}

}  // namespace slotmix
