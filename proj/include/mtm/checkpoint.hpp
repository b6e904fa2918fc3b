#pragma once

// Binary checkpoint, little-endian throughout:
//   magic "MTMCKPT\0" | u32 version | 10 x u64 ModelConfig | u64 count |
//   count x (u32 name_len, name, u32 rank, rank x u64 dims, numel x f64)
// Names are unique. Loading validates the whole file before returning.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtm/alignment.hpp"
#include "mtm/detector.hpp"
#include "mtm/meanteacher.hpp"
#include "mtm/optim.hpp"

namespace mtm::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct Record {
  std::string name;
  ag::Shape shape;
  std::vector<double> values;

  bool operator==(const Record&) const = default;
};

struct Checkpoint {
  det::ModelConfig config;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
// Throws FormatError on bad magic, unknown version, truncation, trailing bytes or duplicate names.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void write_file(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_file(const std::filesystem::path& path);

// Prefixes: "det." detector, "disc." discriminators, "oqkt." OQKT, "opt." Adam state
// ("opt.step", "opt.m.<param>", "opt.v.<param>").
Checkpoint capture(det::Detector& model, align::Discriminators* discs = nullptr, mt::Oqkt* oqkt = nullptr,
                   const ag::Adam* optimizer = nullptr);

// All-or-nothing: every target parameter must be present with a matching shape,
// otherwise nothing is modified and FormatError is thrown.
void restore(const Checkpoint& checkpoint, det::Detector& model, align::Discriminators* discs = nullptr,
             mt::Oqkt* oqkt = nullptr, ag::Adam* optimizer = nullptr);

void save_checkpoint(det::Detector& model, align::Discriminators* discs, const ag::Adam* optimizer,
                     const std::filesystem::path& path, mt::Oqkt* oqkt = nullptr);

struct LoadedState {
  det::Detector model;
  align::Discriminators discs;
  bool has_discriminators = false;
  Checkpoint raw;
};

LoadedState load_checkpoint(const std::filesystem::path& path);

}  // namespace mtm::ckpt
