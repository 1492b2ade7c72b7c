#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "codesym/model.hpp"

#include <nlohmann/json.hpp>

namespace codesym {

// ---------------------------------------------------------------------------
// Model checkpoint container, version 1.
//
//   offset  size            content
//   0       8               magic "CSYMMDL1"
//   8       4               format version, little-endian u32
//   12      4               reserved, zero
//   16      8               header length H, little-endian u64
//   24      H               header JSON (UTF-8, sorted keys)
//   24+H    8*total_doubles parameter blob, little-endian IEEE f64
//
// The header records {"config": ..., "tensors": [{name, rows, cols,
// offset}...], "total_doubles": N}; offsets count doubles from the start of
// the blob, tensors serialize row major in the listed order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'Y', 'M', 'M', 'D', 'L', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline void save_model(const GaModel& model, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t total = 0;
  model.params.visit([&](const std::string& name, const Matrix& m) {
    tensors.push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", total}});
    total += m.data().size();
  });
  const nlohmann::json header = {
      {"config", model.cfg}, {"tensors", tensors}, {"total_doubles", total}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion, reserved = 0;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&reserved), sizeof(reserved));
  const std::uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  model.params.visit([&](const std::string&, const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

inline GaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a model checkpoint: " + path.string());
  std::uint32_t version = 0, reserved = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&reserved), sizeof(reserved));
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());
  const nlohmann::json header = nlohmann::json::parse(header_text);

  GaModel model;
  model.cfg = header.at("config").get<ModelConfig>();
  model.cfg.validate();
  model.params = ParamSet::shaped(model.cfg);

  const std::uint64_t total = header.at("total_doubles").get<std::uint64_t>();
  std::vector<double> blob(total);
  in.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(total * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint blob: " + path.string());

  std::map<std::string, nlohmann::json> by_name;
  for (const auto& t : header.at("tensors")) by_name[t.at("name")] = t;
  model.params.visit([&](const std::string& name, Matrix& m) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    const auto& t = it->second;
    if (t.at("rows").get<std::size_t>() != m.rows() ||
        t.at("cols").get<std::size_t>() != m.cols())
      throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    if (offset + m.data().size() > blob.size())
      throw std::runtime_error("checkpoint tensor '" + name + "' overruns the blob");
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), m.data().size(),
                m.data().begin());
  });
  return model;
}

}  // namespace codesym
