#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mbvbi {

/// Flat `section.key = value` configuration text: one assignment per line,
/// `#` comments, later assignments override earlier ones.  Typed getters
/// throw std::invalid_argument on present-but-malformed values; absent keys
/// yield the caller's default.
class Config {
  public:
    Config() = default;

    static Config parse_text(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated list of reals.
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

  private:
    std::map<std::string, std::string> entries_;
};

} // namespace mbvbi
