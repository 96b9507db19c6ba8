#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace zeroscm {

/// UTF-8 key=value configuration files; '#' starts a comment line.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& fallback = "") const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::string to_text() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace zeroscm
