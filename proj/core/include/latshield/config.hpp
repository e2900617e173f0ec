#pragma once

#include <map>
#include <string>
#include <vector>

#include "latshield/schedule.hpp"

namespace latshield {

/// Flat `key = value` run configuration. Every key must be registered;
/// defaults fill absent keys and the fully resolved set is persisted with
/// each command.
class RunConfig {
public:
    RunConfig(); // defaults only

    static RunConfig from_file(const std::string& path);
    /// Parses the text of a config document into *this (overriding).
    void parse(const std::string& text, const std::string& origin);
    /// CLI-level override; key must be registered.
    void set(const std::string& key, const std::string& value);

    std::string str(const std::string& key) const;
    int integer(const std::string& key) const;
    double real(const std::string& key) const;
    bool boolean(const std::string& key) const;
    uint64_t seed(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    /// JSON document of every effective key (sorted).
    std::string resolved_json() const;
    void write_resolved(const std::string& dir) const;

    static const std::map<std::string, std::string>& defaults();

private:
    std::map<std::string, std::string> values_;
};

} // namespace latshield
