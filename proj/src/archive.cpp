#include "gram/archive.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

namespace gram {

namespace {

constexpr const char* kMagic = "GRAM-ARCHIVE 1";

void append_real(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  out.append(buf, res.ptr);
}

double parse_real(std::string_view tok) {
  double v = 0.0;
  // from_chars with hex format does not accept a sign; handle it here.
  bool neg = false;
  if (!tok.empty() && tok.front() == '-') {
    neg = true;
    tok.remove_prefix(1);
  }
  if (tok == "inf") return neg ? -HUGE_VAL : HUGE_VAL;
  if (tok == "nan") return std::numeric_limits<double>::quiet_NaN();
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v,
                             std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ArchiveError("bad real token: " + std::string(tok));
  return neg ? -v : v;
}

template <class T>
const T& get_as(const std::map<std::string, Archive::Value>& data,
                const std::string& key) {
  auto it = data.find(key);
  if (it == data.end()) throw ArchiveError("missing archive key: " + key);
  const T* p = std::get_if<T>(&it->second);
  if (!p) throw ArchiveError("archive key has wrong kind: " + key);
  return *p;
}

}  // namespace

void Archive::put(const std::string& key, const Eigen::VectorXd& v) {
  data_[key] = std::vector<double>(v.data(), v.data() + v.size());
}

const std::vector<double>& Archive::reals(const std::string& key) const {
  return get_as<std::vector<double>>(data_, key);
}

Eigen::VectorXd Archive::vector(const std::string& key) const {
  const auto& r = reals(key);
  return Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

const std::vector<std::int64_t>& Archive::ints(const std::string& key) const {
  return get_as<std::vector<std::int64_t>>(data_, key);
}

const std::string& Archive::text(const std::string& key) const {
  return get_as<std::string>(data_, key);
}

double Archive::real(const std::string& key) const {
  const auto& r = reals(key);
  if (r.size() != 1) throw ArchiveError("expected scalar real: " + key);
  return r[0];
}

std::int64_t Archive::integer(const std::string& key) const {
  const auto& r = ints(key);
  if (r.size() != 1) throw ArchiveError("expected scalar int: " + key);
  return r[0];
}

void Archive::merge(const std::string& prefix, const Archive& other) {
  for (const auto& [k, v] : other.data_) data_[prefix + k] = v;
}

Archive Archive::sub(const std::string& prefix) const {
  Archive out;
  for (auto it = data_.lower_bound(prefix); it != data_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.data_[it->first.substr(prefix.size())] = it->second;
  }
  return out;
}

std::string Archive::serialize() const {
  std::string out = kMagic;
  out += '\n';
  for (const auto& [key, value] : data_) {
    if (key.find_first_of(" \n") != std::string::npos)
      throw ArchiveError("archive keys may not contain whitespace: " + key);
    out += key;
    if (const auto* r = std::get_if<std::vector<double>>(&value)) {
      out += " real " + std::to_string(r->size()) + "\n";
      for (std::size_t i = 0; i < r->size(); ++i) {
        if (i) out += ' ';
        append_real(out, (*r)[i]);
      }
    } else if (const auto* n = std::get_if<std::vector<std::int64_t>>(&value)) {
      out += " int " + std::to_string(n->size()) + "\n";
      for (std::size_t i = 0; i < n->size(); ++i) {
        if (i) out += ' ';
        out += std::to_string((*n)[i]);
      }
    } else {
      const auto& s = std::get<std::string>(value);
      out += " text " + std::to_string(s.size()) + "\n";
      out += s;
    }
    out += '\n';
  }
  return out;
}

Archive Archive::parse(const std::string& bytes) {
  Archive a;
  std::size_t pos = 0;
  auto next_line = [&]() {
    auto end = bytes.find('\n', pos);
    if (end == std::string::npos) throw ArchiveError("truncated archive");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != kMagic) throw ArchiveError("not a GRAM archive");
  while (pos < bytes.size()) {
    std::istringstream head(next_line());
    std::string key, kind;
    std::size_t n = 0;
    if (!(head >> key >> kind >> n)) throw ArchiveError("bad archive entry header");
    if (kind == "text") {
      if (pos + n + 1 > bytes.size()) throw ArchiveError("truncated text entry: " + key);
      a.data_[key] = bytes.substr(pos, n);
      pos += n + 1;
      continue;
    }
    std::string body = next_line();
    std::vector<std::string_view> toks;
    std::string_view view(body);
    while (!view.empty()) {
      auto sp = view.find(' ');
      toks.push_back(view.substr(0, sp));
      if (sp == std::string_view::npos) break;
      view.remove_prefix(sp + 1);
    }
    if (toks.size() != n) throw ArchiveError("entry size mismatch: " + key);
    if (kind == "real") {
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = parse_real(toks[i]);
      a.data_[key] = std::move(v);
    } else if (kind == "int") {
      std::vector<std::int64_t> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto res = std::from_chars(toks[i].data(), toks[i].data() + toks[i].size(), v[i]);
        if (res.ec != std::errc()) throw ArchiveError("bad int token in " + key);
      }
      a.data_[key] = std::move(v);
    } else {
      throw ArchiveError("unknown entry kind: " + kind);
    }
  }
  return a;
}

void Archive::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot open for writing: " + path);
  f << serialize();
  if (!f) throw ArchiveError("write failed: " + path);
}

Archive Archive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArchiveError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace gram
