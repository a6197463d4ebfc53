#pragma once

// On-disk hidden-state traces.
//
// A trace set is a directory with three files:
//   manifest.json    TraceManifest fields, UTF-8
//   activations.bin  float32 little-endian, row-major [item][layer][dim]
//   index.jsonl      {"item_id","category_id","label"} per line, blob row order
//
// Writing is deterministic: identical inputs give byte-identical files.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "safeprobe/error.hpp"
#include "safeprobe/paradigm.hpp"

namespace safeprobe {

inline constexpr int kTraceFormatVersion = 1;
inline constexpr int kMinCategory = 1;
inline constexpr int kMaxCategory = 13;

enum class SafetyLabel { safe, unsafe, unlabeled };

constexpr std::string_view to_string(SafetyLabel l) noexcept {
    switch (l) {
        case SafetyLabel::safe: return "safe";
        case SafetyLabel::unsafe: return "unsafe";
        case SafetyLabel::unlabeled: return "unlabeled";
    }
    return "?";
}

inline SafetyLabel parse_label(std::string_view s) {
    if (s == "safe") return SafetyLabel::safe;
    if (s == "unsafe") return SafetyLabel::unsafe;
    if (s == "unlabeled") return SafetyLabel::unlabeled;
    detail::fail("label", "unknown safety label '" + std::string(s) + "'");
}

struct TraceManifest {
    int format_version = kTraceFormatVersion;
    std::string model_id;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::size_t n_items = 0;
    Paradigm paradigm = Paradigm::direct;
    std::string variant = "normal";
    std::string token_position;
    std::string dtype = "f32";
    std::string endianness = "little";

    std::size_t floats_per_item() const noexcept { return n_layers * d_model; }
    std::size_t blob_bytes() const noexcept { return n_items * floats_per_item() * 4; }

    bool operator==(const TraceManifest&) const = default;
};

struct ActivationRecord {
    std::string item_id;
    int category_id = kMinCategory;
    SafetyLabel label = SafetyLabel::unlabeled;
    /// n_layers * d_model values, layer-major.
    std::vector<float> states;

    std::span<const float> layer_state(std::size_t layer, std::size_t d_model) const {
        return std::span<const float>(states).subspan(layer * d_model, d_model);
    }
    std::span<float> layer_state(std::size_t layer, std::size_t d_model) {
        return std::span<float>(states).subspan(layer * d_model, d_model);
    }

    bool operator==(const ActivationRecord&) const = default;
};

struct TraceSet {
    TraceManifest manifest;
    std::vector<ActivationRecord> records;

    std::size_t d_model() const noexcept { return manifest.d_model; }
    std::size_t n_layers() const noexcept { return manifest.n_layers; }
    std::size_t size() const noexcept { return records.size(); }

    std::span<const float> state(std::size_t item, std::size_t layer) const {
        return records[item].layer_state(layer, manifest.d_model);
    }

    bool operator==(const TraceSet&) const = default;
};

/// Checks every manifest and record invariant; throws Error naming the field.
inline void validate(const TraceManifest& m) {
    using detail::require;
    require(m.format_version == kTraceFormatVersion, "format_version",
            "unsupported version " + std::to_string(m.format_version) + " (expected " +
                std::to_string(kTraceFormatVersion) + ")");
    require(m.d_model >= 1, "d_model", "must be >= 1");
    require(m.n_layers >= 1, "n_layers", "must be >= 1");
    require(m.dtype == "f32", "dtype", "only f32 is supported, got '" + m.dtype + "'");
    require(m.endianness == "little", "endianness",
            "only little is supported, got '" + m.endianness + "'");
}

inline void validate(const TraceManifest& m, std::span<const ActivationRecord> records) {
    using detail::require;
    validate(m);
    require(records.size() == m.n_items, "n_items",
            "manifest declares " + std::to_string(m.n_items) + " items but " +
                std::to_string(records.size()) + " records are present");
    std::set<std::string_view> seen;
    for (const auto& r : records) {
        require(!r.item_id.empty(), "item_id", "empty item_id");
        require(seen.insert(r.item_id).second, "item_id", "duplicate item_id '" + r.item_id + "'");
        require(r.category_id >= kMinCategory && r.category_id <= kMaxCategory, "category_id",
                "item '" + r.item_id + "' has category " + std::to_string(r.category_id) +
                    " outside 1..13");
        require(r.states.size() == m.floats_per_item(), "states",
                "item '" + r.item_id + "' has " + std::to_string(r.states.size()) +
                    " values, expected n_layers*d_model = " + std::to_string(m.floats_per_item()));
        for (float v : r.states)
            require(std::isfinite(v), "states", "item '" + r.item_id + "' has a non-finite value");
    }
}

inline void validate(const TraceSet& s) { validate(s.manifest, s.records); }

namespace detail {

inline nlohmann::json manifest_to_json(const TraceManifest& m) {
    // nlohmann::json keeps object keys sorted, so the dump is canonical.
    return nlohmann::json{
        {"format_version", m.format_version},
        {"model_id", m.model_id},
        {"d_model", m.d_model},
        {"n_layers", m.n_layers},
        {"n_items", m.n_items},
        {"paradigm", std::string(to_string(m.paradigm))},
        {"variant", m.variant},
        {"token_position", m.token_position},
        {"dtype", m.dtype},
        {"endianness", m.endianness},
    };
}

template <typename T>
T manifest_field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) fail(key, "missing from manifest.json");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(key, std::string("wrong type in manifest.json: ") + e.what());
    }
}

inline TraceManifest manifest_from_json(const nlohmann::json& j) {
    require(j.is_object(), "manifest", "manifest.json is not a JSON object");
    TraceManifest m;
    m.format_version = manifest_field<int>(j, "format_version");
    require(m.format_version == kTraceFormatVersion, "format_version",
            "version mismatch: file has " + std::to_string(m.format_version) + ", reader expects " +
                std::to_string(kTraceFormatVersion));
    const auto signed_dim = [&](const char* key) {
        const auto v = manifest_field<std::int64_t>(j, key);
        require(v >= 0, key, "must be non-negative");
        return static_cast<std::size_t>(v);
    };
    m.model_id = manifest_field<std::string>(j, "model_id");
    m.d_model = signed_dim("d_model");
    m.n_layers = signed_dim("n_layers");
    m.n_items = signed_dim("n_items");
    m.paradigm = parse_paradigm(manifest_field<std::string>(j, "paradigm"));
    m.variant = manifest_field<std::string>(j, "variant");
    m.token_position = manifest_field<std::string>(j, "token_position");
    m.dtype = manifest_field<std::string>(j, "dtype");
    m.endianness = manifest_field<std::string>(j, "endianness");
    return m;
}

inline void put_f32_le(std::string& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<char>(bits & 0xffu));
    out.push_back(static_cast<char>((bits >> 8) & 0xffu));
    out.push_back(static_cast<char>((bits >> 16) & 0xffu));
    out.push_back(static_cast<char>((bits >> 24) & 0xffu));
}

inline float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                               (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
    return std::bit_cast<float>(bits);
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("path", "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail("path", "write failed for '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("path", "cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Writes manifest.json, activations.bin and index.jsonl under `dir`
/// (created if needed). Returns `dir`.
inline std::filesystem::path write_trace_set(const std::filesystem::path& dir,
                                             const TraceManifest& manifest,
                                             std::span<const ActivationRecord> records) {
    validate(manifest, records);
    std::filesystem::create_directories(dir);

    detail::write_file(dir / "manifest.json", detail::manifest_to_json(manifest).dump(2) + "\n");

    std::string blob;
    blob.reserve(manifest.blob_bytes());
    std::string index;
    for (const auto& r : records) {
        for (float v : r.states) detail::put_f32_le(blob, v);
        nlohmann::json line{{"item_id", r.item_id},
                            {"category_id", r.category_id},
                            {"label", std::string(to_string(r.label))}};
        index += line.dump();
        index += '\n';
    }
    detail::write_file(dir / "activations.bin", blob);
    detail::write_file(dir / "index.jsonl", index);
    return dir;
}

inline std::filesystem::path write_trace_set(const std::filesystem::path& dir, const TraceSet& set) {
    return write_trace_set(dir, set.manifest, set.records);
}

inline TraceSet read_trace_set(const std::filesystem::path& dir) {
    using detail::require;
    TraceSet set;

    nlohmann::json mj;
    try {
        mj = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::parse_error& e) {
        detail::fail("manifest", std::string("manifest.json is not valid JSON: ") + e.what());
    }
    set.manifest = detail::manifest_from_json(mj);
    validate(set.manifest);
    const auto& m = set.manifest;

    std::istringstream index(detail::read_file(dir / "index.jsonl"));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(index, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ActivationRecord r;
            r.item_id = j.at("item_id").get<std::string>();
            r.category_id = j.at("category_id").get<int>();
            r.label = parse_label(j.at("label").get<std::string>());
            set.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            detail::fail("index", "index.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    require(set.records.size() == m.n_items, "n_items",
            "count mismatch: manifest declares " + std::to_string(m.n_items) +
                " items but index.jsonl has " + std::to_string(set.records.size()));

    const std::string blob = detail::read_file(dir / "activations.bin");
    require(blob.size() >= m.blob_bytes(), "activations.bin",
            "truncated blob: " + std::to_string(blob.size()) + " bytes, expected " +
                std::to_string(m.blob_bytes()));
    require(blob.size() == m.blob_bytes(), "activations.bin",
            "blob has " + std::to_string(blob.size() - m.blob_bytes()) + " trailing bytes");

    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    for (auto& r : set.records) {
        r.states.resize(m.floats_per_item());
        for (float& v : r.states) {
            v = detail::get_f32_le(p);
            p += 4;
        }
    }
    validate(set);
    return set;
}

struct RecordPair {
    const ActivationRecord* first = nullptr;
    const ActivationRecord* second = nullptr;
};

/// Records of two trace sets matched on item_id. Pointers borrow from the
/// sets passed to pair_by_item, which must outlive the pairing.
struct Pairing {
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::vector<RecordPair> pairs;  // ordered by item_id
    std::vector<std::string> only_in_first;
    std::vector<std::string> only_in_second;
};

enum class PairMode { strict, intersection };

/// Strict mode rejects any unmatched item; intersection mode keeps the
/// overlap and reports the leftovers.
inline Pairing pair_by_item(const TraceSet& a, const TraceSet& b, PairMode mode = PairMode::strict) {
    using detail::require;
    require(a.d_model() == b.d_model(), "d_model",
            "pairing sets with d_model " + std::to_string(a.d_model()) + " and " +
                std::to_string(b.d_model()));
    require(a.n_layers() == b.n_layers(), "n_layers",
            "pairing sets with n_layers " + std::to_string(a.n_layers()) + " and " +
                std::to_string(b.n_layers()));

    std::map<std::string_view, const ActivationRecord*> left, right;
    for (const auto& r : a.records) left.emplace(r.item_id, &r);
    for (const auto& r : b.records) right.emplace(r.item_id, &r);

    Pairing out{a.d_model(), a.n_layers(), {}, {}, {}};
    for (const auto& [id, rec] : left) {
        if (auto it = right.find(id); it != right.end())
            out.pairs.push_back({rec, it->second});
        else
            out.only_in_first.emplace_back(id);
    }
    for (const auto& [id, rec] : right)
        if (!left.contains(id)) out.only_in_second.emplace_back(id);

    require(!out.pairs.empty(), "item_id", "zero overlap between the two trace sets");
    if (mode == PairMode::strict && (!out.only_in_first.empty() || !out.only_in_second.empty())) {
        std::string msg = std::to_string(out.only_in_first.size() + out.only_in_second.size()) +
                          " unmatched items (first: ";
        msg += out.only_in_first.empty() ? "-" : out.only_in_first.front();
        msg += ", second: ";
        msg += out.only_in_second.empty() ? "-" : out.only_in_second.front();
        msg += "); use intersection mode to keep the overlap";
        detail::fail("item_id", msg);
    }
    return out;
}

}  // namespace safeprobe
