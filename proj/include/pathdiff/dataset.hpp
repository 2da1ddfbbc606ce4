#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"
#include "pathdiff/io.hpp"

namespace pathdiff {

using ImageF = Image<float>;
using Color = std::array<double, 3>;

/// Procedural stand-in for a histology world: coloured disc "cells" of K-1
/// classes on a background. The descriptor token factors as
/// token = hue * n_densities + density; hue tints every colour, density
/// multiplies the blob counts by (density + 1).
struct ToyWorldSpec {
  int height = 16;
  int width = 16;
  int num_classes = 4;  // including background
  int n_hues = 3;
  int n_densities = 2;
  int blob_count_min = 1;
  int blob_count_max = 1;
  double blob_radius_min = 1.2;
  double blob_radius_max = 2.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  int vocab_size() const { return n_hues * n_densities; }
  Shape image_shape() const { return {3, height, width}; }

  static constexpr int kMaxClasses = 5;
  static constexpr int kMaxHues = 4;

  void validate() const {
    require(height >= 2 && width >= 2, "toy world needs at least 2x2 images");
    require(num_classes >= 2 && num_classes <= kMaxClasses, "toy world class count must lie in [2, 5]");
    require(n_hues >= 1 && n_hues <= kMaxHues && n_densities >= 1, "toy world needs 1..4 hues and >= 1 density");
    require(vocab_size() >= 2, "toy world vocabulary must have at least 2 tokens");
    require(blob_count_min >= 0 && blob_count_min <= blob_count_max, "invalid blob count range");
    require(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max, "invalid blob radius range");
    require(2.0 * blob_radius_max <= double(std::min(height, width) - 1), "blob radii must fit inside the image");
    require(noise_sigma >= 0.0, "noise sigma must be non-negative");
  }

  int hue_of(int token) const { return token / n_densities; }
  int density_of(int token) const { return token % n_densities; }

  // Palette entries sit on centres of 8-bin histogram cells over [-1, 1]
  // and tints move one cell along one channel.
  static Color class_base_color(int cls) {
    static constexpr std::array<Color, kMaxClasses> palette{{{0.625, 0.375, 0.625},
                                                             {-0.625, -0.625, 0.125},
                                                             {0.375, -0.625, -0.375},
                                                             {-0.375, 0.375, -0.625},
                                                             {-0.875, -0.125, 0.875}}};
    return palette.at(cls);
  }
  static Color hue_tint(int hue) {
    static constexpr std::array<Color, kMaxHues> tints{{{0, 0, 0}, {0.25, 0, 0}, {0, 0.25, 0}, {0, 0, 0.25}}};
    return tints.at(hue);
  }
  static Color render_color(int cls, int hue) {
    Color base = class_base_color(cls), tint = hue_tint(hue);
    return {base[0] + tint[0], base[1] + tint[1], base[2] + tint[2]};
  }
};

inline void to_json(nlohmann::json& j, const ToyWorldSpec& s) {
  j = {{"height", s.height},
       {"width", s.width},
       {"num_classes", s.num_classes},
       {"n_hues", s.n_hues},
       {"n_densities", s.n_densities},
       {"blob_count_min", s.blob_count_min},
       {"blob_count_max", s.blob_count_max},
       {"blob_radius_min", s.blob_radius_min},
       {"blob_radius_max", s.blob_radius_max},
       {"noise_sigma", s.noise_sigma},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, ToyWorldSpec& s) {
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("num_classes").get_to(s.num_classes);
  j.at("n_hues").get_to(s.n_hues);
  j.at("n_densities").get_to(s.n_densities);
  j.at("blob_count_min").get_to(s.blob_count_min);
  j.at("blob_count_max").get_to(s.blob_count_max);
  j.at("blob_radius_min").get_to(s.blob_radius_min);
  j.at("blob_radius_max").get_to(s.blob_radius_max);
  j.at("noise_sigma").get_to(s.noise_sigma);
  j.at("seed").get_to(s.seed);
}

/// Ground-truth triple. Only the evaluation code sees both conditions.
struct Scene {
  std::uint64_t id = 0;
  ImageF image;
  MaskCondition mask;
  TextCondition text;
};

inline Scene render_scene(const ToyWorldSpec& spec, int token, const MaskCondition& mask, Rng& rng) {
  const int hue = spec.hue_of(token);
  ImageF image(spec.image_shape());
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      Color color = ToyWorldSpec::render_color(mask.at(y, x), hue);
      for (int c = 0; c < 3; ++c) {
        double v = color[c];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        image.at(c, y, x) = float(std::clamp(v, -1.0, 1.0));
      }
    }
  return {0, std::move(image), mask, TextCondition(token, spec.vocab_size())};
}

inline constexpr int kPlacementTries = 64;

/// Lays out blobs class by class (later classes overwrite earlier ones on
/// the rare overlap) and renders the image from mask + descriptor.

inline Scene gen_scene_for_token(const ToyWorldSpec& spec, int token, Rng& rng) {
  spec.validate();
  require(token >= 0 && token < spec.vocab_size(), "token out of range");
  const int density = spec.density_of(token);
  std::vector<std::uint8_t> labels(std::size_t(spec.height) * spec.width, 0);
  struct Disc {
    double cy, cx, r;
  };
  std::vector<Disc> placed;
  for (int cls = 1; cls < spec.num_classes; ++cls) {
    const int count = rng.integer(spec.blob_count_min, spec.blob_count_max) * (density + 1);
    for (int b = 0; b < count; ++b) {
      const double r = rng.uniform(spec.blob_radius_min, spec.blob_radius_max);
      // Hard-core placement: retry until the disc keeps a one-pixel gap to
      // every earlier disc; after kPlacementTries the last draw is kept and
      // overlaps are resolved by overwriting.
      Disc d{};
      for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
        d = {rng.uniform(r, spec.height - 1 - r), rng.uniform(r, spec.width - 1 - r), r};
        const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Disc& o) {
          return std::hypot(d.cy - o.cy, d.cx - o.cx) >= d.r + o.r + 1.0;
        });
        if (clear) break;
      }
      placed.push_back(d);
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
          if ((y - d.cy) * (y - d.cy) + (x - d.cx) * (x - d.cx) <= r * r)
            labels[std::size_t(y) * spec.width + x] = std::uint8_t(cls);
    }
  }
  MaskCondition mask(spec.height, spec.width, spec.num_classes, std::move(labels));
  return render_scene(spec, token, mask, rng);
}

/// Draws a descriptor uniformly, then generates a scene for it.
inline Scene gen_scene(const ToyWorldSpec& spec, Rng& rng) {
  spec.validate();
  const int token = rng.integer(0, spec.vocab_size() - 1);
  return gen_scene_for_token(spec, token, rng);
}

/// One training record: exactly one of the two conditions is valid.
struct Record {
  std::uint64_t id = 0;
  ImageF image;
  ConditionPair cond;
};

/// Metadata shared by both halves of a corpus.
struct CorpusInfo {
  std::string kind = "toy";  // "toy" or "gmm"
  Shape shape;
  int num_classes = 0;
  int vocab_size = 0;
  nlohmann::json generator;  // generator parameters, embedded for provenance
};

/// Two disjoint halves: text-to-image records (null masks) and
/// mask-to-image records (null texts). `truth` holds the withheld modality of
/// every scene and is only consumed by evaluation code.
struct UnpairedCorpus {
  CorpusInfo info;
  std::vector<Record> t2i;
  std::vector<Record> m2i;
  std::vector<Scene> truth;

  const Scene* find_truth(std::uint64_t id) const {
    auto it = std::find_if(truth.begin(), truth.end(), [&](const Scene& s) { return s.id == id; });
    return it == truth.end() ? nullptr : &*it;
  }
};

/// Throws unless every record carries exactly its own modality and the two
/// halves share no scene.
inline void validate_unpaired(const UnpairedCorpus& c) {
  std::set<std::uint64_t> ids;
  for (const auto& r : c.t2i) {
    require(r.cond.mask.is_null(), "T2I record " + std::to_string(r.id) + " carries a mask");
    require(!r.cond.text.is_null(), "T2I record " + std::to_string(r.id) + " has a null text");
    require(r.image.shape() == c.info.shape, "T2I record " + std::to_string(r.id) + " has the wrong shape");
    require(ids.insert(r.id).second, "duplicate scene id " + std::to_string(r.id));
  }
  for (const auto& r : c.m2i) {
    require(r.cond.text.is_null(), "M2I record " + std::to_string(r.id) + " carries a text");
    require(!r.cond.mask.is_null(), "M2I record " + std::to_string(r.id) + " has a null mask");
    require(r.image.shape() == c.info.shape, "M2I record " + std::to_string(r.id) + " has the wrong shape");
    require(ids.insert(r.id).second, "scene " + std::to_string(r.id) + " appears in both halves");
  }
}

namespace detail {

inline UnpairedCorpus unpair(CorpusInfo info, std::vector<Scene> scenes, int n_t2i) {
  UnpairedCorpus corpus;
  corpus.info = std::move(info);
  const int h = scenes.front().mask.height();
  const int w = scenes.front().mask.width();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    if (int(i) < n_t2i)
      corpus.t2i.push_back({s.id, s.image, {null_mask(h, w, corpus.info.num_classes), s.text}});
    else
      corpus.m2i.push_back({s.id, s.image, {s.mask, null_text(corpus.info.vocab_size)}});
  }
  corpus.truth = std::move(scenes);
  validate_unpaired(corpus);
  return corpus;
}

}  // namespace detail

/// Scene i uses its own stream derived from (seed, i), so generation order
/// never affects content.
inline UnpairedCorpus make_unpaired(const ToyWorldSpec& spec, int n_t2i, int n_m2i, std::uint64_t seed, int threads = 1) {
  spec.validate();
  require(n_t2i >= 1 && n_m2i >= 1, "make_unpaired needs at least one record per half");
  std::vector<Scene> scenes(std::size_t(n_t2i + n_m2i));
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    Rng rng = Rng::derive(seed, i);
    scenes[i] = gen_scene(spec, rng);
    scenes[i].id = i;
  });
  CorpusInfo info{"toy", spec.image_shape(), spec.num_classes, spec.vocab_size(), spec};
  info.generator["corpus_seed"] = seed;
  return detail::unpair(std::move(info), std::move(scenes), n_t2i);
}

/// Grid of isotropic Gaussians. Column j (the text token) fixes the x mean,
/// row i (the single label of a 1x1 mask) fixes the y mean.
struct GmmGrid {
  std::vector<double> column_means{-3.0, 3.0};
  std::vector<double> row_means{-3.0, 3.0};
  double sigma = 0.5;

  int columns() const { return int(column_means.size()); }
  int rows() const { return int(row_means.size()); }
  Shape image_shape() const { return {2, 1, 1}; }

  void validate() const {
    require(columns() >= 1 && rows() >= 1, "gmm grid needs at least one row and column");
    require(rows() <= 254, "gmm grid has too many rows");
    require(sigma > 0.0, "gmm sigma must be positive");
  }
};

inline void to_json(nlohmann::json& j, const GmmGrid& g) {
  j = {{"column_means", g.column_means}, {"row_means", g.row_means}, {"sigma", g.sigma}};
}

inline void from_json(const nlohmann::json& j, GmmGrid& g) {
  j.at("column_means").get_to(g.column_means);
  j.at("row_means").get_to(g.row_means);
  j.at("sigma").get_to(g.sigma);
}

inline Scene gen_gmm_scene(const GmmGrid& grid, Rng& rng) {
  const int row = rng.integer(0, grid.rows() - 1);
  const int col = rng.integer(0, grid.columns() - 1);
  ImageF image(grid.image_shape());
  image[0] = float(grid.column_means[col] + grid.sigma * rng.normal());
  image[1] = float(grid.row_means[row] + grid.sigma * rng.normal());
  return {0, std::move(image), MaskCondition::filled(1, 1, grid.rows(), row), TextCondition(col, grid.columns())};
}

inline UnpairedCorpus gen_gmm_corpus(const GmmGrid& grid, int n_t2i, int n_m2i, std::uint64_t seed) {
  grid.validate();
  require(n_t2i >= 1 && n_m2i >= 1, "gen_gmm_corpus needs at least one record per half");
  std::vector<Scene> scenes(std::size_t(n_t2i + n_m2i));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    Rng rng = Rng::derive(seed, i);
    scenes[i] = gen_gmm_scene(grid, rng);
    scenes[i].id = i;
  }
  CorpusInfo info{"gmm", grid.image_shape(), grid.rows(), grid.columns(), grid};
  info.generator["corpus_seed"] = seed;
  info.generator["dim"] = 2;
  return detail::unpair(std::move(info), std::move(scenes), n_t2i);
}

/// Seeded shuffle-split applied to each half independently.
inline std::pair<UnpairedCorpus, UnpairedCorpus> split(const UnpairedCorpus& corpus, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, "split ratio must lie in (0,1)");
  UnpairedCorpus train, test;
  train.info = test.info = corpus.info;
  Rng rng(seed);
  auto split_half = [&](const std::vector<Record>& half, std::vector<Record>& a, std::vector<Record>& b, const char* name) {
    const std::size_t n_train = std::size_t(std::llround(ratio * double(half.size())));
    require(n_train >= 1 && n_train < half.size(),
            std::string("split of the ") + name + " half (" + std::to_string(half.size()) + " records) leaves a side empty");
    std::vector<std::size_t> order(half.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_train ? a : b).push_back(half[order[k]]);
  };
  split_half(corpus.t2i, train.t2i, test.t2i, "T2I");
  split_half(corpus.m2i, train.m2i, test.m2i, "M2I");
  std::set<std::uint64_t> train_ids;
  for (const auto* half : {&train.t2i, &train.m2i})
    for (const auto& r : *half) train_ids.insert(r.id);
  for (const auto& s : corpus.truth) (train_ids.count(s.id) ? train : test).truth.push_back(s);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// On-disk format
//
//   manifest.json      counts, shapes, generator parameters, per-file CRC32
//   images/<id>.f32    H*W*C little-endian float32, channel-last
//   masks/<id>.pgm     M2I masks
//   withheld/          withheld modalities, listed in the manifest's
//                      "withheld" section; only load_truth() reads them
// ---------------------------------------------------------------------------

namespace detail {

inline std::string file_stem(std::uint64_t id) {
  std::string s = std::to_string(id);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

inline io::Bytes checked_read(const std::filesystem::path& dir, const std::string& rel, const std::string& crc) {
  io::Bytes bytes;
  try {
    bytes = io::read_bytes(dir / rel);
  } catch (const ValidationError&) {
    throw ValidationError("missing file " + rel);
  }
  if (io::crc32_hex(bytes) != crc) throw ValidationError("checksum mismatch in " + rel);
  return bytes;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw ValidationError("missing manifest " + path.string());
  try {
    auto j = nlohmann::json::parse(io::read_text(path));
    if (j.value("format", "") != "pathdiff-corpus") throw ValidationError("manifest is not a pathdiff corpus");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

inline CorpusInfo read_info(const nlohmann::json& j) {
  CorpusInfo info;
  info.kind = j.at("kind").get<std::string>();
  info.shape = {j.at("shape").at("channels").get<int>(), j.at("shape").at("height").get<int>(),
                j.at("shape").at("width").get<int>()};
  info.num_classes = j.at("num_classes").get<int>();
  info.vocab_size = j.at("vocab_size").get<int>();
  info.generator = j.at("generator");
  return info;
}

}  // namespace detail

inline void save_corpus(const UnpairedCorpus& corpus, const std::filesystem::path& dir,
                        const nlohmann::json& provenance = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  validate_unpaired(corpus);
  fs::create_directories(dir);
  const auto& info = corpus.info;
  nlohmann::json m;
  m["format"] = "pathdiff-corpus";
  m["version"] = 1;
  m["kind"] = info.kind;
  m["shape"] = {{"channels", info.shape.channels}, {"height", info.shape.height}, {"width", info.shape.width}};
  m["num_classes"] = info.num_classes;
  m["vocab_size"] = info.vocab_size;
  m["generator"] = info.generator;
  m["provenance"] = provenance;
  m["counts"] = {{"t2i", corpus.t2i.size()}, {"m2i", corpus.m2i.size()}, {"withheld", corpus.truth.size()}};

  auto write_image = [&](const Record& r) {
    const std::string rel = "images/" + detail::file_stem(r.id) + ".f32";
    const auto bytes = io::encode_f32_hwc(r.image);
    io::write_bytes(dir / rel, bytes);
    return std::pair{rel, io::crc32_hex(bytes)};
  };
  m["t2i"] = nlohmann::json::array();
  for (const auto& r : corpus.t2i) {
    auto [rel, crc] = write_image(r);
    m["t2i"].push_back({{"id", r.id}, {"image", rel}, {"image_crc32", crc}, {"text", r.cond.text.token()}});
  }
  m["m2i"] = nlohmann::json::array();
  for (const auto& r : corpus.m2i) {
    auto [rel, crc] = write_image(r);
    const std::string mrel = "masks/" + detail::file_stem(r.id) + ".pgm";
    const auto mbytes = io::encode_pgm(r.cond.mask);
    io::write_bytes(dir / mrel, mbytes);
    m["m2i"].push_back({{"id", r.id}, {"image", rel}, {"image_crc32", crc}, {"mask", mrel}, {"mask_crc32", io::crc32_hex(mbytes)}});
  }
  m["withheld"] = nlohmann::json::array();
  for (const auto& s : corpus.truth) {
    const std::string mrel = "withheld/" + detail::file_stem(s.id) + ".pgm";
    const auto mbytes = io::encode_pgm(s.mask);
    io::write_bytes(dir / mrel, mbytes);
    m["withheld"].push_back({{"id", s.id}, {"mask", mrel}, {"mask_crc32", io::crc32_hex(mbytes)}, {"text", s.text.token()}});
  }
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

/// Loads the two training halves. Never touches the withheld section.
inline UnpairedCorpus load_corpus(const std::filesystem::path& dir) {
  const auto m = detail::read_manifest(dir);
  UnpairedCorpus corpus;
  try {
    corpus.info = detail::read_info(m);
    const auto& info = corpus.info;
    for (const auto& e : m.at("t2i")) {
      const std::string rel = e.at("image");
      auto image = io::decode_f32_hwc(detail::checked_read(dir, rel, e.at("image_crc32")), info.shape, rel);
      corpus.t2i.push_back({e.at("id").get<std::uint64_t>(), std::move(image),
                            {null_mask(info.shape.height, info.shape.width, info.num_classes),
                             TextCondition(e.at("text").get<int>(), info.vocab_size)}});
    }
    for (const auto& e : m.at("m2i")) {
      const std::string rel = e.at("image"), mrel = e.at("mask");
      auto image = io::decode_f32_hwc(detail::checked_read(dir, rel, e.at("image_crc32")), info.shape, rel);
      auto mask = io::decode_pgm(detail::checked_read(dir, mrel, e.at("mask_crc32")), info.num_classes, mrel);
      require(mask.height() == info.shape.height && mask.width() == info.shape.width, mrel + ": mask size mismatch");
      corpus.m2i.push_back({e.at("id").get<std::uint64_t>(), std::move(image), {std::move(mask), null_text(info.vocab_size)}});
    }
    if (m.at("counts").at("t2i").get<std::size_t>() != corpus.t2i.size() ||
        m.at("counts").at("m2i").get<std::size_t>() != corpus.m2i.size())
      throw ValidationError("manifest counts disagree with its record lists");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  validate_unpaired(corpus);
  return corpus;
}

/// Evaluation-only: withheld masks and texts of every scene in the corpus,
/// joined with the stored images.
inline std::vector<Scene> load_truth(const std::filesystem::path& dir) {
  const auto m = detail::read_manifest(dir);
  std::vector<Scene> truth;
  try {
    const CorpusInfo info = detail::read_info(m);
    // id -> (image path, crc)
    std::unordered_map<std::uint64_t, std::pair<std::string, std::string>> images;
    for (const auto* section : {&m.at("t2i"), &m.at("m2i")})
      for (const auto& e : *section)
        images[e.at("id").get<std::uint64_t>()] = {e.at("image").get<std::string>(), e.at("image_crc32").get<std::string>()};
    for (const auto& e : m.at("withheld")) {
      const auto id = e.at("id").get<std::uint64_t>();
      const std::string mrel = e.at("mask");
      auto mask = io::decode_pgm(detail::checked_read(dir, mrel, e.at("mask_crc32")), info.num_classes, mrel);
      require(images.count(id) == 1, "withheld scene " + std::to_string(id) + " has no image");
      const auto& [rel, crc] = images[id];
      auto image = io::decode_f32_hwc(detail::checked_read(dir, rel, crc), info.shape, rel);
      truth.push_back({id, std::move(image), std::move(mask), TextCondition(e.at("text").get<int>(), info.vocab_size)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  return truth;
}

}  // namespace pathdiff
