#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace gram {

struct ArchiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat, self-describing key/value store used for checkpoints. Reals are
// written as hexadecimal floating point so a save/load round trip is exact.
//
// File layout:
//   GRAM-ARCHIVE 1
//   <key> real <n>\n<v0> <v1> ...\n
//   <key> int <n>\n<i0> <i1> ...\n
//   <key> text <bytes>\n<raw bytes>\n
class Archive {
 public:
  using Value =
      std::variant<std::vector<double>, std::vector<std::int64_t>, std::string>;

  void put(const std::string& key, std::vector<double> v) { data_[key] = std::move(v); }
  void put(const std::string& key, const Eigen::VectorXd& v);
  void put(const std::string& key, std::vector<std::int64_t> v) { data_[key] = std::move(v); }
  void put(const std::string& key, std::string v) { data_[key] = std::move(v); }
  void put_real(const std::string& key, double v) { put(key, std::vector<double>{v}); }
  void put_int(const std::string& key, std::int64_t v) {
    put(key, std::vector<std::int64_t>{v});
  }

  bool has(const std::string& key) const { return data_.count(key) != 0; }
  const std::vector<double>& reals(const std::string& key) const;
  Eigen::VectorXd vector(const std::string& key) const;
  const std::vector<std::int64_t>& ints(const std::string& key) const;
  const std::string& text(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;

  // Copies every entry of `other` under `prefix`.
  void merge(const std::string& prefix, const Archive& other);
  // Entries whose key starts with `prefix`, with the prefix removed.
  Archive sub(const std::string& prefix) const;

  std::string serialize() const;
  static Archive parse(const std::string& bytes);
  void save(const std::string& path) const;
  static Archive load(const std::string& path);

  const std::map<std::string, Value>& entries() const { return data_; }

 private:
  std::map<std::string, Value> data_;
};

}  // namespace gram
