#pragma once

#include <compare>
#include <cstddef>
#include <string>

namespace heterolora {

// Adapter attachment points. Declaration order defines the site ordering
// used for deterministic iteration and report rows.
enum class Site : int {
    q_proj,
    k_proj,
    v_proj,
    o_proj,
    ffn_w1,
    ffn_w2,
    res1,
    res2,
    in,
    cut,
};

const char* site_name(Site site);
Site site_from_name(const std::string& name);  // throws ConfigError on unknown names
bool site_is_shortcut(Site site);

struct ModuleId {
    std::size_t layer = 0;
    Site site = Site::q_proj;

    auto operator<=>(const ModuleId&) const = default;
};

std::string to_string(const ModuleId& id);

}  // namespace heterolora
