#include "dicforge/dataset.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dicforge/png_io.hpp"
#include "dicforge/warp.hpp"

namespace dicforge::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Sample assemble(uint64_t base_seed, uint64_t index, const speckle::SpeckleSpec& spec,
                bool zero_field) {
  const uint64_t seed = sample_seed(base_seed, index);

  Sample sample;
  sample.seed = seed;
  sample.index = index;

  speckle::SpecklePattern pattern;
  try {
    pattern = speckle::generate_speckle(spec, seed);
  } catch (const std::exception& e) {
    throw validation_error("speckle stage failed for sample " + std::to_string(index) + ": " + e.what());
  }

  bspline::DisplacementField field256;
  try {
    field256 = bspline::make_displacement_field(seed, 256, 256);
    if (zero_field) {
      field256.u.values = Grid<float>(256, 256, 0.f);
      field256.v.values = Grid<float>(256, 256, 0.f);
    }
  } catch (const std::exception& e) {
    throw validation_error("field stage failed for sample " + std::to_string(index) + ": " + e.what());
  }

  try {
    bspline::DisplacementField field512;
    field512.u = bspline::mirror_extend(field256.u);
    field512.v = bspline::mirror_extend(field256.v);
    const Image deformed512 = warp::warp_image(pattern.pixels, field512);
    sample.reference = warp::center_crop(pattern.pixels);
    sample.deformed = warp::center_crop(deformed512);
  } catch (const std::exception& e) {
    throw validation_error("warp stage failed for sample " + std::to_string(index) + ": " + e.what());
  }
  sample.field = std::move(field256);
  return sample;
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_f32_plane(std::string& buf, const Grid<float>& g) {
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      uint32_t bits;
      const float v = g.at(y, x);
      std::memcpy(&bits, &v, 4);
      put_u32(buf, bits);
    }
  }
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos++])) << (8 * i);
  return v;
}

uint64_t get_u64(const std::string& buf, size_t& pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos++])) << (8 * i);
  return v;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw io_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_checksum(const fs::path& path) {
  const std::string bytes = read_file_bytes(path.string());
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace

Sample make_sample(uint64_t base_seed, uint64_t index, const speckle::SpeckleSpec& spec) {
  return assemble(base_seed, index, spec, false);
}

Sample make_sample_zero_field(uint64_t base_seed, uint64_t index,
                              const speckle::SpeckleSpec& spec) {
  return assemble(base_seed, index, spec, true);
}

void write_dfld(const std::string& path, const bspline::DisplacementField& field) {
  const int h = field.u.height();
  const int w = field.u.width();
  if (field.v.height() != h || field.v.width() != w) {
    throw validation_error("u and v planes differ in size");
  }
  std::string payload;
  payload.reserve(size_t(h) * w * 8);
  put_f32_plane(payload, field.u.values);
  put_f32_plane(payload, field.v.values);

  std::string buf;
  buf.reserve(payload.size() + 28);
  buf += "DFLD";
  put_u32(buf, 1);  // version
  put_u32(buf, uint32_t(h));
  put_u32(buf, uint32_t(w));
  put_u32(buf, 2);  // channels
  buf += payload;
  put_u64(buf, fnv1a64(payload.data(), payload.size()));
  write_file_atomic(path, buf);
}

DfldHeader read_dfld_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char head[20];
  if (!in.read(head, 20)) throw io_error("truncated DFLD header in " + path);
  if (std::memcmp(head, "DFLD", 4) != 0) throw io_error("bad DFLD magic in " + path);
  std::string s(head, 20);
  size_t pos = 4;
  DfldHeader hdr;
  hdr.version = get_u32(s, pos);
  hdr.height = get_u32(s, pos);
  hdr.width = get_u32(s, pos);
  hdr.channels = get_u32(s, pos);
  return hdr;
}

bspline::DisplacementField read_dfld(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  if (buf.size() < 20 || std::memcmp(buf.data(), "DFLD", 4) != 0) {
    throw io_error("bad DFLD magic in " + path);
  }
  size_t pos = 4;
  const uint32_t version = get_u32(buf, pos);
  const uint32_t h = get_u32(buf, pos);
  const uint32_t w = get_u32(buf, pos);
  const uint32_t channels = get_u32(buf, pos);
  if (version != 1) throw io_error("unsupported DFLD version in " + path);
  if (channels != 2) throw io_error("unsupported DFLD channel count in " + path);
  const size_t payload_len = size_t(h) * w * 2 * 4;
  if (buf.size() < 20 + payload_len + 8) throw io_error("truncated payload in " + path);

  const uint64_t stored = [&] {
    size_t p = 20 + payload_len;
    return get_u64(buf, p);
  }();
  if (fnv1a64(buf.data() + 20, payload_len) != stored) {
    throw io_error("checksum mismatch in " + path);
  }

  bspline::DisplacementField field;
  auto read_plane = [&](Grid<float>& g) {
    g = Grid<float>(int(h), int(w));
    for (int y = 0; y < int(h); ++y) {
      for (int x = 0; x < int(w); ++x) {
        const uint32_t bits = get_u32(buf, pos);
        float v;
        std::memcpy(&v, &bits, 4);
        g.at(y, x) = v;
      }
    }
  };
  read_plane(field.u.values);
  read_plane(field.v.values);
  return field;
}

SampleEntry write_sample(const fs::path& root, const Sample& sample) {
  char name[32];
  std::snprintf(name, sizeof name, "%06llu", static_cast<unsigned long long>(sample.index));

  SampleEntry entry;
  entry.index = sample.index;
  entry.seed = sample.seed;
  entry.reference_path = std::string("pairs/") + name + ".ref.png";
  entry.deformed_path = std::string("pairs/") + name + ".def.png";
  entry.field_path = std::string("pairs/") + name + ".dfld";

  fs::create_directories(root / "pairs");
  png::write_gray16((root / entry.reference_path).string(), sample.reference);
  png::write_gray16((root / entry.deformed_path).string(), sample.deformed);
  write_dfld((root / entry.field_path).string(), sample.field);

  entry.reference_checksum = file_checksum(root / entry.reference_path);
  entry.deformed_checksum = file_checksum(root / entry.deformed_path);
  entry.field_checksum = file_checksum(root / entry.field_path);
  return entry;
}

Sample read_sample(const fs::path& root, const SampleEntry& entry) {
  Sample sample;
  sample.index = entry.index;
  sample.seed = entry.seed;
  sample.reference = png::read_gray16((root / entry.reference_path).string());
  sample.deformed = png::read_gray16((root / entry.deformed_path).string());
  sample.field = read_dfld((root / entry.field_path).string());
  return sample;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json spec;
  spec["frame_size"] = m.speckle_spec.frame_size;
  spec["gray_segments"] = m.speckle_spec.gray_segments;
  spec["count_range"] = m.speckle_spec.count_range;
  spec["axis_range"] = m.speckle_spec.axis_range;
  spec["background"] = m.speckle_spec.background;

  json grid;
  grid["width"] = m.grid_config.width;
  grid["height"] = m.grid_config.height;
  grid["z_limit"] = m.grid_config.z_limit;
  grid["jitter"] = m.grid_config.jitter;

  json samples = json::array();
  for (const auto& e : m.samples) {
    samples.push_back({{"index", e.index},
                       {"seed", e.seed},
                       {"reference", e.reference_path},
                       {"deformed", e.deformed_path},
                       {"field", e.field_path},
                       {"reference_checksum", e.reference_checksum},
                       {"deformed_checksum", e.deformed_checksum},
                       {"field_checksum", e.field_checksum}});
  }

  json root;
  root["version"] = m.version;
  root["sample_count"] = m.sample_count;
  root["split"] = {{"train", m.train_count}, {"test", m.test_count}};
  root["base_seed"] = m.base_seed;
  root["speckle_spec"] = spec;
  root["grid_config"] = grid;
  // The label convention: fields are attached to deformed-image pixels,
  // displacement of the deformed pixel relative to the reference.
  root["field_convention"] = "backward: reference(x - u, y - v) = deformed(x, y)";
  root["samples"] = samples;
  return root.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  json root = json::parse(text);
  DatasetManifest m;
  m.version = root.at("version").get<int>();
  m.sample_count = root.at("sample_count").get<uint64_t>();
  m.train_count = root.at("split").at("train").get<uint64_t>();
  m.test_count = root.at("split").at("test").get<uint64_t>();
  m.base_seed = root.at("base_seed").get<uint64_t>();

  const json& spec = root.at("speckle_spec");
  m.speckle_spec.frame_size = spec.at("frame_size").get<int>();
  m.speckle_spec.gray_segments = spec.at("gray_segments").get<std::vector<std::pair<double, double>>>();
  m.speckle_spec.count_range = spec.at("count_range").get<std::pair<int, int>>();
  m.speckle_spec.axis_range = spec.at("axis_range").get<std::pair<double, double>>();
  m.speckle_spec.background = spec.at("background").get<double>();

  const json& grid = root.at("grid_config");
  m.grid_config.width = grid.at("width").get<int>();
  m.grid_config.height = grid.at("height").get<int>();
  m.grid_config.z_limit = grid.at("z_limit").get<double>();
  m.grid_config.jitter = grid.at("jitter").get<double>();

  for (const json& e : root.at("samples")) {
    SampleEntry entry;
    entry.index = e.at("index").get<uint64_t>();
    entry.seed = e.at("seed").get<uint64_t>();
    entry.reference_path = e.at("reference").get<std::string>();
    entry.deformed_path = e.at("deformed").get<std::string>();
    entry.field_path = e.at("field").get<std::string>();
    entry.reference_checksum = e.at("reference_checksum").get<std::string>();
    entry.deformed_checksum = e.at("deformed_checksum").get<std::string>();
    entry.field_checksum = e.at("field_checksum").get<std::string>();
    m.samples.push_back(std::move(entry));
  }
  if (m.sample_count != m.train_count + m.test_count) {
    throw validation_error("manifest split does not add up to sample_count");
  }
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  return manifest_from_json(read_file_bytes((dir / "manifest.json").string()));
}

DatasetManifest generate_dataset(const GenerateConfig& cfg) {
  if (cfg.count == 0) throw validation_error("count must be positive");
  if (cfg.train_count > cfg.count) throw validation_error("train split exceeds sample count");
  if (cfg.workers < 1) throw validation_error("workers must be >= 1");

  if (fs::exists(cfg.out_dir) && !fs::is_empty(cfg.out_dir)) {
    if (!cfg.overwrite) {
      throw validation_error("output directory exists and is not empty (use overwrite)");
    }
    fs::remove_all(cfg.out_dir);
  }
  fs::create_directories(cfg.out_dir);
  { std::ofstream marker(cfg.out_dir / ".incomplete"); }

  std::vector<SampleEntry> entries(cfg.count);
  std::atomic<uint64_t> next{0};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&] {
    for (;;) {
      const uint64_t i = next.fetch_add(1);
      if (i >= cfg.count) return;
      try {
        const Sample sample = make_sample(cfg.base_seed, i, cfg.speckle_spec);
        entries[i] = write_sample(cfg.out_dir, sample);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (first_error.empty()) first_error = e.what();
        next.store(cfg.count);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  for (int t = 0; t < cfg.workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (!first_error.empty()) {
    throw io_error("dataset generation aborted (partial output marked incomplete): " + first_error);
  }

  DatasetManifest manifest;
  manifest.sample_count = cfg.count;
  manifest.train_count = cfg.train_count;
  manifest.test_count = cfg.count - cfg.train_count;
  manifest.base_seed = cfg.base_seed;
  manifest.speckle_spec = cfg.speckle_spec;
  manifest.samples = std::move(entries);

  write_file_atomic(cfg.out_dir / "manifest.json", manifest_to_json(manifest));
  fs::remove(cfg.out_dir / ".incomplete");
  return manifest;
}

}  // namespace dicforge::data
