#include "phrec/simulate.hpp"

#include "phrec/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace phrec {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void SimulationSpec::validate(const Atlas& atlas) const {
    if (!(severity > 0.0) || severity > 1.0)
        throw ValidationError("severity must be in (0, 1], got " + std::to_string(severity));
    if (!(smoothing_sigma_mm >= 0.0) || !std::isfinite(smoothing_sigma_mm))
        throw ValidationError("smoothing sigma must be finite and >= 0");
    if (!atlas.subtype_regions.count(subtype))
        throw ValidationError("unknown subtype: " + subtype);
}

Mask build_subtype_mask(const Atlas& atlas, const std::string& subtype) {
    auto it = atlas.subtype_regions.find(subtype);
    if (it == atlas.subtype_regions.end()) {
        std::string known;
        for (const auto& [name, ids] : atlas.subtype_regions) {
            (void)ids;
            known += known.empty() ? name : ", " + name;
        }
        throw ValidationError("unknown subtype: " + subtype + " (known: " + known + ")");
    }
    std::set<int> wanted(it->second.begin(), it->second.end());
    for (int id : wanted)
        if (id < 1 || id > atlas.merged_count())
            throw ValidationError("subtype " + subtype + " references region " +
                                  std::to_string(id) + " outside 1.." +
                                  std::to_string(atlas.merged_count()));
    Mask m;
    m.dims = atlas.labels.dims;
    m.spacing_mm = atlas.labels.spacing_mm;
    m.data.resize(atlas.labels.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = wanted.count(atlas.merged_at(i)) ? 1 : 0;
    return m;
}

WeightMask smooth_mask(const Mask& m, double sigma_mm) {
    Volume v;
    v.dims = m.dims;
    v.spacing_mm = m.spacing_mm;
    v.data.resize(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) v.data[i] = m.data[i];
    v = gaussian_smooth(v, sigma_mm);
    WeightMask w;
    w.dims = v.dims;
    w.spacing_mm = v.spacing_mm;
    w.data.resize(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i)
        w.data[i] = std::clamp(v.data[i], 0.0, 1.0);
    return w;
}

Volume simulate_hypometabolism(const Volume& x, const WeightMask& w, double severity) {
    if (x.dims != w.dims) throw ValidationError("simulate_hypometabolism: dim mismatch");
    if (!(severity > 0.0) || severity > 1.0)
        throw ValidationError("severity must be in (0, 1]");
    Volume out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = x.data[i] * (1.0 - severity * w.data[i]);
    return out;
}

std::string simulated_set_id(const std::string& subtype, double severity) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", severity);
    std::string s(buf);
    std::replace(s.begin(), s.end(), '.', 'p');
    return subtype + "_" + s;
}

std::vector<SimulatedSet> materialize_test_sets(const CohortManifest& test_cohort,
                                                const Atlas& atlas,
                                                const std::vector<double>& ad_severities,
                                                const std::vector<std::string>& subtypes,
                                                double subtype_severity,
                                                double smoothing_sigma_mm,
                                                const fs::path& out_dir) {
    if (ad_severities.empty()) throw ValidationError("AD severity list must be nonempty");
    if (atlas.labels.dims[0] == 0) throw ValidationError("empty atlas");

    struct SetSpec {
        std::string subtype;
        double severity;
    };
    std::vector<SetSpec> specs;
    for (double f : ad_severities) specs.push_back({"AD", f});
    for (const auto& st : subtypes) {
        if (st == "AD") continue; // AD already covered by the severity sweep
        specs.push_back({st, subtype_severity});
    }
    for (const auto& s : specs)
        SimulationSpec{s.subtype, s.severity, smoothing_sigma_mm}.validate(atlas);

    // smooth each needed subtype mask once
    std::map<std::string, WeightMask> weights;
    for (const auto& s : specs)
        if (!weights.count(s.subtype))
            weights[s.subtype] = smooth_mask(build_subtype_mask(atlas, s.subtype),
                                             smoothing_sigma_mm);

    fs::create_directories(out_dir);
    std::vector<SimulatedSet> sets;
    for (const auto& spec : specs) {
        SimulatedSet set;
        set.set_id = simulated_set_id(spec.subtype, spec.severity);
        set.subtype = spec.subtype;
        set.severity = spec.severity;
        fs::create_directories(out_dir / set.set_id);
        const WeightMask& w = weights.at(spec.subtype);
        for (const auto& rec : test_cohort.records) {
            const Volume x = load_volume(test_cohort.resolve(rec));
            if (x.dims != w.dims)
                throw ValidationError("test image grid does not match atlas grid: " +
                                      rec.volume_path);
            const Volume sim = simulate_hypometabolism(x, w, spec.severity);
            SimulatedRecord r;
            r.image_id = rec.subject_id + "_" + rec.session_id;
            r.simulated_path = set.set_id + "/" + r.image_id + ".vol1.json";
            r.source_path =
                fs::relative(test_cohort.resolve(rec), out_dir).string();
            r.subtype = spec.subtype;
            r.severity = spec.severity;
            r.mask_id = spec.subtype;
            save_volume(sim, out_dir / r.simulated_path);
            set.records.push_back(std::move(r));
        }
        sets.push_back(std::move(set));
    }
    save_simulated_sets(sets, out_dir / "sets.jsonl");
    return sets;
}

void save_simulated_sets(const std::vector<SimulatedSet>& sets, const fs::path& jsonl_path) {
    std::ofstream out(jsonl_path);
    if (!out) throw IoError("cannot write " + jsonl_path.string());
    for (const auto& set : sets) {
        for (const auto& r : set.records) {
            json j;
            j["set_id"] = set.set_id;
            j["image_id"] = r.image_id;
            j["source_path"] = r.source_path;
            j["simulated_path"] = r.simulated_path;
            j["subtype"] = r.subtype;
            j["severity"] = r.severity;
            j["mask_id"] = r.mask_id;
            out << j.dump() << "\n";
        }
    }
    if (!out) throw IoError("write failed for " + jsonl_path.string());
}

std::vector<SimulatedSet> load_simulated_sets(const fs::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("cannot open " + jsonl_path.string());
    std::vector<SimulatedSet> sets;
    std::map<std::string, std::size_t> by_id;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError("bad set manifest line: " + std::string(e.what()));
        }
        SimulatedRecord r;
        std::string set_id;
        try {
            set_id = j.at("set_id").get<std::string>();
            r.image_id = j.at("image_id").get<std::string>();
            r.source_path = j.at("source_path").get<std::string>();
            r.simulated_path = j.at("simulated_path").get<std::string>();
            r.subtype = j.at("subtype").get<std::string>();
            r.severity = j.at("severity").get<double>();
            r.mask_id = j.at("mask_id").get<std::string>();
        } catch (const json::exception& e) {
            throw ValidationError("bad set manifest record: " + std::string(e.what()));
        }
        auto it = by_id.find(set_id);
        if (it == by_id.end()) {
            by_id[set_id] = sets.size();
            SimulatedSet s;
            s.set_id = set_id;
            s.subtype = r.subtype;
            s.severity = r.severity;
            sets.push_back(std::move(s));
            it = by_id.find(set_id);
        }
        sets[it->second].records.push_back(std::move(r));
    }
    return sets;
}

} // namespace phrec
