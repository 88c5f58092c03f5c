#include <algorithm>
#include <cmath>

#include "mpmae/synth/synth.hpp"

namespace mpmae::synth {

std::int64_t StratumAllocation::total() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.count;
    return n;
}

std::map<int, std::int64_t> StratumAllocation::per_biome_totals() const {
    std::map<int, std::int64_t> out;
    for (const auto& e : entries) out[e.biome] += e.count;
    return out;
}

StratumAllocation allocate_stratified(std::int64_t n_total, const std::map<int, EcoArea>& areas,
                                      int biome_count) {
    if (areas.empty()) throw std::invalid_argument("allocate_stratified: empty area map");
    if (n_total <= 0 || biome_count <= 0)
        throw std::invalid_argument("allocate_stratified: counts must be positive");

    std::map<int, std::int64_t> biome_area;
    for (const auto& [eco, a] : areas) {
        if (a.area <= 0) throw std::invalid_argument("allocate_stratified: non-positive area");
        biome_area[a.biome] += a.area;
    }

    StratumAllocation alloc;
    const double per_biome = static_cast<double>(n_total) / static_cast<double>(biome_count);

    // group ecoregions by biome, ordered by id
    std::map<int, std::vector<int>> by_biome;
    for (const auto& [eco, a] : areas) by_biome[a.biome].push_back(eco);

    // Each biome's ecoregions cover it exactly (A_B = sum of its A_e), so the
    // per-biome quota is N_t / biome_count; flooring it bounds the grand total
    // by N_t and makes materialized biomes receive identical counts.
    const auto biome_target = static_cast<std::int64_t>(std::floor(per_biome));

    std::map<int, StratumAllocation::Entry> out;
    for (const auto& [biome, ecos] : by_biome) {
        const double a_b = static_cast<double>(biome_area[biome]);
        std::vector<std::pair<double, int>> fracs;  // (-frac, eco) for descending order
        for (int eco : ecos) {
            const double q = per_biome * static_cast<double>(areas.at(eco).area) / a_b;
            const auto n_e = static_cast<std::int64_t>(std::floor(q));
            fracs.push_back({-(q - static_cast<double>(n_e)), eco});
            out[eco] = {eco, biome, areas.at(eco).area, biome_area[biome], n_e};
        }
        std::int64_t assigned = 0;
        for (int eco : ecos) assigned += out[eco].count;
        std::int64_t residual = biome_target - assigned;
        std::sort(fracs.begin(), fracs.end());  // descending fraction, ties by lower eco id
        for (std::size_t i = 0; residual > 0 && i < fracs.size(); ++i, --residual)
            out[fracs[i].second].count += 1;
    }
    for (auto& [eco, entry] : out) alloc.entries.push_back(entry);
    return alloc;
}

}  // namespace mpmae::synth
