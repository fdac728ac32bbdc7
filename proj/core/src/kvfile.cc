#include "ivfrank/kvfile.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ivfrank/common.h"

namespace ivfrank {

void KeyValueFile::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
      value.find('\n') != std::string::npos) {
    throw InvalidArgument("KeyValueFile: invalid key or value for '" + key + "'");
  }
  entries_[key] = value;
}

void KeyValueFile::set(const std::string& key, std::uint64_t value) {
  set(key, std::to_string(value));
}

void KeyValueFile::set(const std::string& key, double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  set(key, std::string(buf, end));
}

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw FormatError("missing key '" + key + "'");
  return it->second;
}

std::uint64_t KeyValueFile::get_u64(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("key '" + key + "' is not an unsigned integer: " + s);
  }
  return v;
}

double KeyValueFile::get_double(const std::string& key) const {
  const auto& s = get(key);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("key '" + key + "' is not a number: " + s);
  }
  return v;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  KeyValueFile kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.entries_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace ivfrank
