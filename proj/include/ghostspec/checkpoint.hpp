#pragma once

// Checkpoint container: an 8-byte little-endian header length, a JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then the data region.
// Offsets are relative to the start of the data region. Sharded checkpoints
// are described by an index JSON whose "weight_map" maps tensor name -> shard
// file name, all shards living next to the index.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ghostspec/dtype.hpp"
#include "ghostspec/error.hpp"
#include "ghostspec/matrix.hpp"

namespace ghostspec {

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::uint64_t begin = 0;  // relative to the data region
  std::uint64_t end = 0;

  std::uint64_t element_count() const noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                           std::multiplies<>());
  }
  std::uint64_t byte_length() const noexcept { return end - begin; }

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// Read-only view of a single-file or sharded checkpoint. Payloads are read
/// lazily; every read opens its own stream so concurrent loads are safe.
class Checkpoint {
 public:
  static Checkpoint open(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
      throw InputError("checkpoint not found: " + path.string());
    }
    Checkpoint ckpt;
    ckpt.path_ = path;
    if (looks_like_index(path)) {
      ckpt.open_index(path);
    } else {
      ckpt.add_shard(path);
    }
    return ckpt;
  }

  const std::filesystem::path& path() const noexcept { return path_; }
  std::size_t shard_count() const noexcept { return shards_.size(); }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  /// All records, ordered by tensor name.
  std::vector<TensorRecord> records() const {
    std::vector<TensorRecord> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(e.record);
    return out;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const TensorRecord& record(const std::string& name) const { return entry(name).record; }

  /// Raw little-endian payload bytes of one tensor.
  std::vector<unsigned char> read_bytes(const std::string& name) const {
    const Entry& e = entry(name);
    const Shard& shard = shards_[e.shard];
    std::ifstream in(shard.path, std::ios::binary);
    if (!in) throw InputError("cannot open shard " + shard.path.string());
    std::vector<unsigned char> buf(e.record.byte_length());
    in.seekg(static_cast<std::streamoff>(shard.data_start + e.record.begin));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
      throw InputError("truncated data region while reading '" + name + "'");
    }
    return buf;
  }

  /// Every element of a tensor widened to double, row-major.
  std::vector<double> read_values(const std::string& name) const {
    const TensorRecord& rec = record(name);
    const auto bytes = read_bytes(name);
    const std::size_t width = dtype_width(rec.dtype);
    std::vector<double> values(rec.element_count());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = decode_element(rec.dtype, bytes.data() + i * width);
    }
    return values;
  }

  WeightMatrix load_matrix(const std::string& name) const {
    const TensorRecord& rec = record(name);
    if (rec.shape.size() != 2) {
      throw InputError("tensor '" + name + "' is non-2-D (rank " +
                       std::to_string(rec.shape.size()) + ")");
    }
    if (rec.shape[0] == 0 || rec.shape[1] == 0) {
      throw InputError("tensor '" + name + "' has an empty dimension");
    }
    WeightMatrix m(rec.shape[0], rec.shape[1], read_values(name), name);
    if (const std::size_t bad = m.first_non_finite(); bad != m.size()) {
      throw InputError("tensor '" + name + "' contains a non-finite value at flat index " +
                       std::to_string(bad) + " (row " + std::to_string(bad / m.cols()) +
                       ", col " + std::to_string(bad % m.cols()) + ")");
    }
    return m;
  }

 private:
  struct Shard {
    std::filesystem::path path;
    std::uint64_t data_start = 0;
  };
  struct Entry {
    TensorRecord record;
    std::size_t shard = 0;
  };

  static bool looks_like_index(const std::filesystem::path& path) {
    if (path.extension() == ".json") return true;
    std::ifstream in(path, std::ios::binary);
    char c = 0;
    in.get(c);
    return in && c == '{';
  }

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown tensor '" + name + "'");
    return it->second;
  }

  void open_index(const std::filesystem::path& index_path) {
    std::ifstream in(index_path);
    nlohmann::json index;
    try {
      index = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("shard index " + index_path.string() + " is not valid JSON: " + e.what());
    }
    if (!index.is_object() || !index.contains("weight_map") || !index["weight_map"].is_object()) {
      throw InputError("shard index " + index_path.string() + " has no \"weight_map\" object");
    }
    // Distinct shard files in sorted order so shard numbering is deterministic.
    std::map<std::string, std::vector<std::string>> by_shard;
    for (const auto& [tensor, file] : index["weight_map"].items()) {
      if (!file.is_string()) throw InputError("weight_map entry for '" + tensor + "' is not a string");
      by_shard[file.get<std::string>()].push_back(tensor);
    }
    const auto dir = index_path.parent_path();
    for (const auto& [file, tensors] : by_shard) {
      const std::filesystem::path shard_path = dir / file;
      if (std::filesystem::path(file).has_parent_path()) {
        throw InputError("shard '" + file + "' must live in the index directory");
      }
      if (!std::filesystem::exists(shard_path)) {
        throw InputError("missing shard " + shard_path.string());
      }
      const std::size_t first_new = shards_.size();
      add_shard(shard_path);
      for (const auto& t : tensors) {
        auto it = entries_.find(t);
        if (it == entries_.end() || it->second.shard != first_new) {
          throw InputError("weight_map lists '" + t + "' in " + file + " but the shard lacks it");
        }
      }
    }
  }

  void add_shard(const std::filesystem::path& shard_path) {
    const std::uint64_t file_size = std::filesystem::file_size(shard_path);
    std::ifstream in(shard_path, std::ios::binary);
    if (!in) throw InputError("cannot open " + shard_path.string());
    if (file_size < 8) throw InputError("truncated header: file shorter than 8 bytes");
    unsigned char len_bytes[8];
    in.read(reinterpret_cast<char*>(len_bytes), 8);
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];
    if (header_len > file_size - 8) {
      throw InputError("truncated header: declared length " + std::to_string(header_len) +
                       " exceeds file size " + std::to_string(file_size));
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));

    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(header);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("header of " + shard_path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw InputError("header of " + shard_path.string() + " is not an object");

    const std::uint64_t data_start = 8 + header_len;
    const std::uint64_t data_size = file_size - data_start;
    const std::size_t shard_index = shards_.size();
    shards_.push_back({shard_path, data_start});

    std::vector<TensorRecord> recs;
    for (const auto& [name, info] : doc.items()) {
      if (name == "__metadata__") {
        if (info.is_object()) {
          for (const auto& [k, v] : info.items()) {
            metadata_[k] = v.is_string() ? v.get<std::string>() : v.dump();
          }
        }
        continue;
      }
      recs.push_back(parse_record(name, info));
    }
    for (const auto& rec : recs) {
      if (rec.end > data_size) {
        throw InputError("truncated data region: tensor '" + rec.name + "' ends at " +
                         std::to_string(rec.end) + " but the region holds " +
                         std::to_string(data_size) + " bytes");
      }
    }
    std::vector<const TensorRecord*> order;
    for (const auto& r : recs) order.push_back(&r);
    std::sort(order.begin(), order.end(),
              [](const TensorRecord* a, const TensorRecord* b) { return a->begin < b->begin; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (order[i]->begin < order[i - 1]->end && order[i]->byte_length() > 0 &&
          order[i - 1]->byte_length() > 0) {
        throw InputError("tensors '" + order[i - 1]->name + "' and '" + order[i]->name +
                         "' have overlapping byte ranges");
      }
    }
    for (auto& rec : recs) {
      if (entries_.count(rec.name)) {
        throw InputError("duplicate tensor name '" + rec.name + "' across shards");
      }
      std::string key = rec.name;
      entries_.emplace(std::move(key), Entry{std::move(rec), shard_index});
    }
  }

  static TensorRecord parse_record(const std::string& name, const nlohmann::json& info) {
    if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
        !info.contains("data_offsets")) {
      throw InputError("header entry '" + name + "' lacks dtype/shape/data_offsets");
    }
    TensorRecord rec;
    rec.name = name;
    try {
      rec.dtype = parse_dtype(info["dtype"].get<std::string>());
      rec.shape = info["shape"].get<std::vector<std::uint64_t>>();
      const auto offsets = info["data_offsets"].get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1]) {
        throw InputError("tensor '" + name + "' has malformed data_offsets");
      }
      rec.begin = offsets[0];
      rec.end = offsets[1];
    } catch (const nlohmann::json::exception& e) {
      throw InputError("header entry '" + name + "' is malformed: " + e.what());
    }
    if (rec.byte_length() != rec.element_count() * dtype_width(rec.dtype)) {
      throw InputError("tensor '" + name + "' byte range length " +
                       std::to_string(rec.byte_length()) + " does not match shape and dtype");
    }
    return rec;
  }

  std::filesystem::path path_;
  std::vector<Shard> shards_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> metadata_;
};

/// Accumulates tensors and writes a single-file checkpoint. Payloads are laid
/// out in insertion order; the header is padded with spaces to 8-byte alignment.
class CheckpointWriter {
 public:
  void add(const std::string& name, DType dtype, std::vector<std::uint64_t> shape,
           std::span<const double> values) {
    const std::uint64_t count =
        std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
    if (count != values.size()) {
      throw InputError("tensor '" + name + "': value count does not match shape");
    }
    const std::size_t width = dtype_width(dtype);
    std::vector<unsigned char> bytes(values.size() * width);
    for (std::size_t i = 0; i < values.size(); ++i) {
      encode_element(dtype, values[i], bytes.data() + i * width);
    }
    add_raw(name, dtype, std::move(shape), std::move(bytes));
  }

  void add(const std::string& name, DType dtype, const WeightMatrix& m) {
    add(name, dtype, {m.rows(), m.cols()}, m.data());
  }

  void add_raw(const std::string& name, DType dtype, std::vector<std::uint64_t> shape,
               std::vector<unsigned char> bytes) {
    for (const auto& p : pending_) {
      if (p.record.name == name) throw InputError("duplicate tensor name '" + name + "'");
    }
    TensorRecord rec{name, dtype, std::move(shape), offset_, offset_ + bytes.size()};
    if (rec.byte_length() != rec.element_count() * dtype_width(dtype)) {
      throw InputError("tensor '" + name + "': byte length does not match shape and dtype");
    }
    offset_ = rec.end;
    pending_.push_back({std::move(rec), std::move(bytes)});
  }

  void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }

  void write(const std::filesystem::path& path) const {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata_.empty()) header["__metadata__"] = metadata_;
    for (const auto& p : pending_) {
      header[p.record.name] = {{"dtype", std::string(dtype_name(p.record.dtype))},
                               {"shape", p.record.shape},
                               {"data_offsets", {p.record.begin, p.record.end}}};
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    const std::uint64_t len = text.size();
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xFFu);
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : pending_) {
      out.write(reinterpret_cast<const char*>(p.bytes.data()),
                static_cast<std::streamsize>(p.bytes.size()));
    }
    if (!out) throw InputError("failed writing " + path.string());
  }

 private:
  struct Pending {
    TensorRecord record;
    std::vector<unsigned char> bytes;
  };
  std::vector<Pending> pending_;
  std::map<std::string, std::string> metadata_;
  std::uint64_t offset_ = 0;
};

}  // namespace ghostspec
