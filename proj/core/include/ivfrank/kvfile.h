#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace ivfrank {

/// Small `key=value` text file, one pair per line, written in key order.
/// Lines starting with '#' and blank lines are ignored on read.
class KeyValueFile {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, double value);

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static KeyValueFile load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace ivfrank
