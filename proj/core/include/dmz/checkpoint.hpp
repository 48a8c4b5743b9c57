#pragma once

#include <memory>
#include <string>

#include "dmz/tensor.hpp"
#include "dmz/trainer.hpp"

namespace dmz::io {

// Binary container: magic, format version, JSON config, step counter, then
// named float64 tensor sections (parameter values, optimizer moments, EMA
// shadows), ending in a CRC-32 of everything before it. Writes go to a
// temporary file first and are renamed into place.
void save_checkpoint(const train::ModelState& state, const std::string& path);

// Throws IoError (unreadable), CorruptionError (bad magic/CRC/truncation) or
// VersionError (format from a different writer).
std::unique_ptr<train::ModelState> load_checkpoint(const std::string& path);

// Latent code matrix (B, n_bits) with entries in {0,1}, stored bit-packed.
void save_codes(const Tensor& codes, const std::string& path);
Tensor load_codes(const std::string& path);

// Config round-trip used by the checkpoint container and the CLI.
std::string config_to_json(const train::TrainConfig& cfg);
train::TrainConfig config_from_json(const std::string& text);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

// Write via a temporary file renamed into place; creates parent directories.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace dmz::io
