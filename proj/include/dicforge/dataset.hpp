#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dicforge/bspline.hpp"
#include "dicforge/common.hpp"
#include "dicforge/speckle.hpp"

namespace dicforge::data {

/// One labeled dataset entry: cropped reference/deformed pair plus the
/// displacement field that produced the deformation.
struct Sample {
  Image reference;                  // 256x256, [0,1]
  Image deformed;                   // 256x256, [0,1]
  bspline::DisplacementField field; // 256x256, |u|,|v| <= 5
  uint64_t seed = 0;
  uint64_t index = 0;
};

/// Per-sample seed schedule: the index-th output of a SplitMix64 stream
/// seeded with base_seed, so generation order and worker count cannot
/// change any sample.
inline uint64_t sample_seed(uint64_t base_seed, uint64_t index) {
  return splitmix_at(base_seed, index);
}

/// Runs the full synthesis pipeline for one sample: speckle at 512,
/// displacement field at 256, mirror extension to 512, backward warp,
/// center crop of both images back to 256. The stored field is exactly
/// the center window of the field used for warping.
Sample make_sample(uint64_t base_seed, uint64_t index,
                   const speckle::SpeckleSpec& spec = {});

/// Test hook: same pipeline with the displacement forced to zero.
Sample make_sample_zero_field(uint64_t base_seed, uint64_t index,
                              const speckle::SpeckleSpec& spec = {});

// --- DFLD displacement-field container -----------------------------------
// magic "DFLD" | u32 version=1 | u32 H | u32 W | u32 channels=2
// | H*W f32 LE u-plane | H*W f32 LE v-plane | u64 FNV-1a of payload

void write_dfld(const std::string& path, const bspline::DisplacementField& field);
bspline::DisplacementField read_dfld(const std::string& path);

struct DfldHeader {
  uint32_t version = 0, height = 0, width = 0, channels = 0;
};
DfldHeader read_dfld_header(const std::string& path);

// --- sample files ----------------------------------------------------------

struct SampleEntry {
  uint64_t index = 0;
  uint64_t seed = 0;
  std::string reference_path;  // relative to the dataset root
  std::string deformed_path;
  std::string field_path;
  std::string reference_checksum;  // FNV-1a 64 of file bytes, hex
  std::string deformed_checksum;
  std::string field_checksum;
};

/// Writes reference/deformed as 16-bit PNG and the field as DFLD.
SampleEntry write_sample(const std::filesystem::path& root, const Sample& sample);
Sample read_sample(const std::filesystem::path& root, const SampleEntry& entry);

struct DatasetManifest {
  int version = 1;
  uint64_t sample_count = 0;
  uint64_t train_count = 0;
  uint64_t test_count = 0;
  uint64_t base_seed = 0;
  speckle::SpeckleSpec speckle_spec;
  bspline::GridConfig grid_config;
  std::vector<SampleEntry> samples;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);
DatasetManifest read_manifest(const std::filesystem::path& dir);

struct GenerateConfig {
  std::filesystem::path out_dir;
  uint64_t count = 12500;
  uint64_t train_count = 10000;
  uint64_t base_seed = 0;
  int workers = 1;
  bool overwrite = false;
  speckle::SpeckleSpec speckle_spec;
};

/// Generates `count` samples in parallel and writes manifest.json last,
/// atomically. Output bytes are independent of the worker count. Refuses
/// an existing output directory unless overwrite is set; a `.incomplete`
/// marker flags aborted runs.
DatasetManifest generate_dataset(const GenerateConfig& cfg);

}  // namespace dicforge::data
