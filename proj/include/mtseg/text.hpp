#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtseg {

/// Shortest decimal representation that round-trips exactly.
std::string format_double(double v);

std::string_view trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Strict parsers: the whole (trimmed) string must be consumed.
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);
std::optional<bool> parse_bool(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
/// Throws std::runtime_error if the file cannot be written.
void write_text_file(const std::filesystem::path& path, std::string_view content);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, int line, const std::string& message)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + message),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

/// One `[name]` block. The implicit leading block has an empty name.
struct Section {
    std::string name;
    int line = 0;
    std::vector<KeyValue> entries;

    const KeyValue* find(std::string_view key) const;
};

/// `key = value` text with optional `[section]` headers. Sections may repeat;
/// `#` starts a comment. Keys are unique within one section instance.
struct KeyValueDocument {
    std::string source;
    std::vector<Section> sections;

    static KeyValueDocument parse(std::string_view text, std::string source = "<text>");
    static KeyValueDocument load(const std::filesystem::path& path);

    /// First section named `name`, or nullptr.
    const Section* section(std::string_view name) const;
    std::vector<const Section*> all(std::string_view name) const;
};

/// Typed accessor over one section that tracks which keys were consumed so
/// leftovers can be rejected.
class SectionReader {
public:
    SectionReader(const Section* section, std::string source);

    std::optional<std::string> get_string(std::string_view key);
    std::optional<double> get_double(std::string_view key);
    std::optional<std::int64_t> get_int(std::string_view key);
    std::optional<bool> get_bool(std::string_view key);
    std::optional<std::vector<double>> get_doubles(std::string_view key, std::size_t count);
    std::optional<std::vector<std::int64_t>> get_ints(std::string_view key);

    std::string require_string(std::string_view key);

    /// Throws ParseError naming the first key never read.
    void reject_unknown() const;

private:
    const KeyValue* take(std::string_view key);
    [[noreturn]] void fail(const KeyValue& kv, const std::string& what) const;

    const Section* section_;
    std::string source_;
    std::vector<std::string> used_;
};

}  // namespace mtseg
