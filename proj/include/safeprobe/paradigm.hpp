#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "safeprobe/error.hpp"

namespace safeprobe {

/// Conversation prefix placed before the same safety query.
enum class Paradigm {
    direct,
    text_prior_normal,
    text_prior_harmful,
    gen_prefill_neutral,
    gen_prefill_harmful,
    visual_state,
    tool_standard,
    tool_benign,
    tool_unsafe,
    tool_mask_white,
    tool_mask_noise,
};

inline constexpr std::array<std::pair<Paradigm, std::string_view>, 11> kParadigmNames{{
    {Paradigm::direct, "direct"},
    {Paradigm::text_prior_normal, "text_prior_normal"},
    {Paradigm::text_prior_harmful, "text_prior_harmful"},
    {Paradigm::gen_prefill_neutral, "gen_prefill_neutral"},
    {Paradigm::gen_prefill_harmful, "gen_prefill_harmful"},
    {Paradigm::visual_state, "visual_state"},
    {Paradigm::tool_standard, "tool_standard"},
    {Paradigm::tool_benign, "tool_benign"},
    {Paradigm::tool_unsafe, "tool_unsafe"},
    {Paradigm::tool_mask_white, "tool_mask_white"},
    {Paradigm::tool_mask_noise, "tool_mask_noise"},
}};

constexpr std::string_view to_string(Paradigm p) noexcept {
    for (const auto& [tag, name] : kParadigmNames)
        if (tag == p) return name;
    return "?";
}

inline std::optional<Paradigm> try_parse_paradigm(std::string_view s) noexcept {
    for (const auto& [tag, name] : kParadigmNames)
        if (name == s) return tag;
    return std::nullopt;
}

inline Paradigm parse_paradigm(std::string_view s) {
    if (auto p = try_parse_paradigm(s)) return *p;
    detail::fail("paradigm", "unknown paradigm tag '" + std::string(s) + "'");
}

/// Explicit image-tool interaction paradigms (the ones carrying the residual shift).
constexpr bool is_tool_paradigm(Paradigm p) noexcept {
    switch (p) {
        case Paradigm::tool_standard:
        case Paradigm::tool_benign:
        case Paradigm::tool_unsafe:
        case Paradigm::tool_mask_white:
        case Paradigm::tool_mask_noise:
            return true;
        default:
            return false;
    }
}

}  // namespace safeprobe
