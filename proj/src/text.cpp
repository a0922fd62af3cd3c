#include "mtseg/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mtseg {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) {
        throw std::runtime_error("format_double failed");
    }
    return std::string(buf.data(), end);
}

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

std::optional<bool> parse_bool(std::string_view s) {
    std::string t(trim(s));
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    return std::nullopt;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

const KeyValue* Section::find(std::string_view key) const {
    for (const auto& kv : entries) {
        if (kv.key == key) return &kv;
    }
    return nullptr;
}

KeyValueDocument KeyValueDocument::parse(std::string_view text, std::string source) {
    KeyValueDocument doc;
    doc.source = std::move(source);
    doc.sections.push_back(Section{"", 0, {}});
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ParseError(doc.source, line_no, "malformed section header");
            }
            doc.sections.push_back(
                Section{std::string(trim(line.substr(1, line.size() - 2))), line_no, {}});
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(doc.source, line_no, "expected 'key = value'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ParseError(doc.source, line_no, "empty key");
        }
        auto& sec = doc.sections.back();
        if (sec.find(key) != nullptr) {
            throw ParseError(doc.source, line_no, "duplicate key '" + key + "'");
        }
        sec.entries.push_back(KeyValue{std::move(key), std::move(value), line_no});
    }
    return doc;
}

KeyValueDocument KeyValueDocument::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

const Section* KeyValueDocument::section(std::string_view name) const {
    for (const auto& s : sections) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::vector<const Section*> KeyValueDocument::all(std::string_view name) const {
    std::vector<const Section*> out;
    for (const auto& s : sections) {
        if (s.name == name) out.push_back(&s);
    }
    return out;
}

SectionReader::SectionReader(const Section* section, std::string source)
    : section_(section), source_(std::move(source)) {}

const KeyValue* SectionReader::take(std::string_view key) {
    if (section_ == nullptr) return nullptr;
    const KeyValue* kv = section_->find(key);
    if (kv != nullptr) used_.emplace_back(key);
    return kv;
}

void SectionReader::fail(const KeyValue& kv, const std::string& what) const {
    throw ParseError(source_, kv.line, "key '" + kv.key + "': " + what);
}

std::optional<std::string> SectionReader::get_string(std::string_view key) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    return kv->value;
}

std::optional<double> SectionReader::get_double(std::string_view key) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    auto v = parse_double(kv->value);
    if (!v) fail(*kv, "expected a number, got '" + kv->value + "'");
    return v;
}

std::optional<std::int64_t> SectionReader::get_int(std::string_view key) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    auto v = parse_int(kv->value);
    if (!v) fail(*kv, "expected an integer, got '" + kv->value + "'");
    return v;
}

std::optional<bool> SectionReader::get_bool(std::string_view key) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    auto v = parse_bool(kv->value);
    if (!v) fail(*kv, "expected true/false, got '" + kv->value + "'");
    return v;
}

std::optional<std::vector<double>> SectionReader::get_doubles(std::string_view key,
                                                              std::size_t count) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    std::vector<double> out;
    for (const auto& tok : split_whitespace(kv->value)) {
        auto v = parse_double(tok);
        if (!v) fail(*kv, "expected numbers, got '" + kv->value + "'");
        out.push_back(*v);
    }
    if (out.size() != count) {
        fail(*kv, "expected " + std::to_string(count) + " values");
    }
    return out;
}

std::optional<std::vector<std::int64_t>> SectionReader::get_ints(std::string_view key) {
    const KeyValue* kv = take(key);
    if (kv == nullptr) return std::nullopt;
    std::vector<std::int64_t> out;
    for (const auto& tok : split_whitespace(kv->value)) {
        auto v = parse_int(tok);
        if (!v) fail(*kv, "expected integers, got '" + kv->value + "'");
        out.push_back(*v);
    }
    return out;
}

std::string SectionReader::require_string(std::string_view key) {
    auto v = get_string(key);
    if (!v) {
        throw ParseError(source_, section_ != nullptr ? section_->line : 0,
                         "missing key '" + std::string(key) + "'");
    }
    return *v;
}

void SectionReader::reject_unknown() const {
    if (section_ == nullptr) return;
    for (const auto& kv : section_->entries) {
        if (std::find(used_.begin(), used_.end(), kv.key) == used_.end()) {
            throw ParseError(source_, kv.line, "unknown key '" + kv.key + "'");
        }
    }
}

}  // namespace mtseg
