#pragma once

#include <string>

#include "dmz/ar_prior.hpp"
#include "dmz/latent_tools.hpp"
#include "dmz/translate.hpp"

namespace dmz::io {

// Small artifacts (probe weights, priors, latent maps) travel as JSON text;
// doubles round-trip exactly through the shortest-representation dump.
void save_probe(const tools::LinearProbe& probe, const std::string& path);
tools::LinearProbe load_probe(const std::string& path);

void save_ar_prior(const latent::ARPrior& prior, const std::string& path);
latent::ARPrior load_ar_prior(const std::string& path);

void save_latent_map(const translate::LatentMap& map, const std::string& path);
std::unique_ptr<translate::LatentMap> load_latent_map(const std::string& path);

}  // namespace dmz::io
