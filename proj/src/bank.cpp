#include "xmad/bank.hpp"

#include <algorithm>
#include <limits>

#include "json.hpp"
#include "xmad/cmft.hpp"
#include "xmad/fsutil.hpp"
#include "xmad/parallel.hpp"
#include "xmad/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmad::bank {

const char* to_string(MetricKind kind) {
    switch (kind) {
        case MetricKind::L1: return "l1";
        case MetricKind::L2: return "l2";
        case MetricKind::Cosine: return "cosine";
    }
    return "?";
}

MetricKind parse_metric(std::string_view text) {
    std::string t(text);
    std::ranges::transform(t, t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "l1") return MetricKind::L1;
    if (t == "l2") return MetricKind::L2;
    if (t == "cosine" || t == "cos") return MetricKind::Cosine;
    fail(ErrorKind::Usage, "unknown metric '" + std::string(text) + "' (expected l1|l2|cosine)");
}

void PatchSet::push_back(std::span<const float> v, PatchSource source) {
    if (dim == 0 && data.empty()) dim = v.size();
    require(v.size() == dim, ErrorKind::Shape, "patch width " + std::to_string(v.size()) + " != " + std::to_string(dim));
    data.insert(data.end(), v.begin(), v.end());
    sources.push_back(std::move(source));
}

PatchSet collect_patches(std::span<const FeatureMap> maps, std::span<const std::string> ids) {
    require(ids.empty() || ids.size() == maps.size(), ErrorKind::Shape, "one id per feature map expected");
    PatchSet set;
    if (!maps.empty()) set.dim = maps[0].dim();
    for (std::size_t m = 0; m < maps.size(); ++m) {
        const FeatureMap& map = maps[m];
        require(map.dim() == set.dim, ErrorKind::Shape,
                "feature map " + std::to_string(m) + " has width " + std::to_string(map.dim()) + ", expected " +
                    std::to_string(set.dim));
        for (std::size_t c = 0; c < map.cells(); ++c) {
            if (map.is_background(c)) continue;
            set.push_back(map.cell(c), {ids.empty() ? std::to_string(m) : ids[m], c});
        }
    }
    return set;
}

std::vector<double> ProjectionMatrix::project(std::span<const float> v) const {
    require(v.size() == in_dim, ErrorKind::Shape, "projection input width mismatch");
    std::vector<double> out(out_dim, 0.0);
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double x = v[i];
        if (x == 0.0) continue;
        const std::int8_t* row = signs.data() + i * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) {
            if (row[j] > 0) {
                out[j] += x;
            } else if (row[j] < 0) {
                out[j] -= x;
            }
        }
    }
    for (double& o : out) o *= scale;
    return out;
}

ProjectionMatrix make_projection(std::size_t dim, std::size_t target_dim, double density, std::uint64_t seed) {
    require(target_dim >= 1 && target_dim <= dim, ErrorKind::Shape,
            "projection target " + std::to_string(target_dim) + " must lie in [1, " + std::to_string(dim) + "]");
    require(density > 0.0 && density <= 1.0, ErrorKind::Shape, "projection density must lie in (0, 1]");
    ProjectionMatrix p;
    p.in_dim = dim;
    p.out_dim = target_dim;
    p.density = density;
    p.seed = seed;
    p.scale = std::sqrt(1.0 / (density * static_cast<double>(target_dim)));
    p.signs.resize(dim * target_dim);
    Rng rng(seed);
    for (auto& s : p.signs) {
        const double u = uniform01(rng);
        s = u < density / 2.0 ? std::int8_t{1} : u < density ? std::int8_t{-1} : std::int8_t{0};
    }
    if (density >= 1.0) {
        for (auto& s : p.signs) {
            if (s == 0) s = 1;
        }
    }
    return p;
}

std::size_t coreset_size(std::size_t patches, double fraction) {
    require(fraction > 0.0 && fraction <= 1.0, ErrorKind::Value, "coreset fraction must lie in (0, 1]");
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(patches)));
    return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(patches, 1));
}

namespace {

template <typename T>
std::vector<std::size_t> greedy_maxmin(std::size_t n, std::size_t dim, const T* data, std::size_t k, std::size_t start,
                                       MetricKind metric, std::size_t workers) {
    constexpr double kSelected = -1.0;
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> out;
    out.reserve(k);
    const std::size_t chunks = chunk_count(n, workers);
    std::vector<std::pair<double, std::size_t>> best(chunks);

    std::size_t last = start;
    while (true) {
        out.push_back(last);
        min_d[last] = kSelected;
        if (out.size() == k) break;
        const std::span<const T> anchor(data + last * dim, dim);
        parallel_chunks(n, workers, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
            double best_d = -std::numeric_limits<double>::infinity();
            std::size_t best_i = end;
            for (std::size_t i = begin; i < end; ++i) {
                if (min_d[i] == kSelected) continue;
                const double d = distance<T>(metric, std::span<const T>(data + i * dim, dim), anchor);
                if (d < min_d[i]) min_d[i] = d;
                if (min_d[i] > best_d) {
                    best_d = min_d[i];
                    best_i = i;
                }
            }
            best[chunk] = {best_d, best_i};
        });
        double best_d = -std::numeric_limits<double>::infinity();
        std::size_t best_i = n;
        for (std::size_t c = 0; c < chunks; ++c) {
            if (best[c].second < n && best[c].first > best_d) {
                best_d = best[c].first;
                best_i = best[c].second;
            }
        }
        last = best_i;
    }
    return out;
}

}  // namespace

std::vector<std::size_t> coreset_select(const PatchSet& patches, const CoresetOptions& options) {
    const std::size_t n = patches.size();
    require(n > 0, ErrorKind::DegenerateInput, "coreset selection over an empty patch set");
    const std::size_t k = coreset_size(n, options.fraction);
    std::size_t start = 0;
    if (options.start) {
        require(*options.start < n, ErrorKind::Value, "coreset start index out of range");
        start = *options.start;
    } else {
        Rng rng(options.seed);
        start = uniform_index(rng, n);
    }
    if (options.projection == nullptr) {
        return greedy_maxmin<float>(n, patches.dim, patches.data.data(), k, start, options.metric, options.workers);
    }
    const ProjectionMatrix& proj = *options.projection;
    require(proj.in_dim == patches.dim, ErrorKind::Shape, "projection does not match the patch width");
    std::vector<double> projected(n * proj.out_dim);
    parallel_chunks(n, options.workers, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto p = proj.project(patches.row(i));
            std::copy(p.begin(), p.end(), projected.begin() + static_cast<std::ptrdiff_t>(i * proj.out_dim));
        }
    });
    return greedy_maxmin<double>(n, proj.out_dim, projected.data(), k, start, options.metric, options.workers);
}

Neighbor nn_query(const MemoryBank& bank, std::span<const float> feature) {
    require(feature.size() == bank.dim, ErrorKind::Shape,
            "query width " + std::to_string(feature.size()) + " != bank width " + std::to_string(bank.dim));
    require(bank.size() > 0, ErrorKind::DegenerateInput, "query against an empty bank");
    Neighbor best{std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const double d = distance(bank.metric, feature, bank.row(i));
        if (d < best.distance) best = {d, i};
    }
    return best;
}

MemoryBank build_bank_from_patches(const PatchSet& patches, Modality modality, const BankConfig& cfg) {
    require(patches.size() > 0, ErrorKind::DegenerateInput,
            std::string("every ") + to_string(modality) + " training cell is background; nothing to bank");
    MemoryBank bank;
    bank.modality = modality;
    bank.metric = cfg.metric;
    bank.dim = patches.dim;
    bank.fraction = cfg.fraction;
    bank.seed = cfg.seed;

    std::optional<ProjectionMatrix> proj;
    if (cfg.use_projection && patches.dim > cfg.projection_dim) {
        const double density = cfg.projection_density > 0.0 ? cfg.projection_density : default_density(patches.dim);
        proj = make_projection(patches.dim, cfg.projection_dim, density, derive_seed(cfg.seed, 7));
        bank.projection = ProjectionInfo{proj->in_dim, proj->out_dim, proj->density, proj->seed};
    }
    CoresetOptions opt;
    opt.fraction = cfg.fraction;
    opt.metric = cfg.metric;
    opt.projection = proj ? &*proj : nullptr;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    bank.selected = coreset_select(patches, opt);
    bank.rows.reserve(bank.selected.size() * bank.dim);
    for (std::size_t i : bank.selected) {
        const auto r = patches.row(i);
        bank.rows.insert(bank.rows.end(), r.begin(), r.end());
        bank.sources.push_back(patches.sources[i]);
    }
    return bank;
}

MemoryBank build_bank(std::span<const FeatureMap> maps, Modality modality, const BankConfig& cfg,
                      std::span<const std::string> ids) {
    return build_bank_from_patches(collect_patches(maps, ids), modality, cfg);
}

void save_bank(const MemoryBank& bank, const fs::path& dir) {
    fs::create_directories(dir);
    FeatureMap rows(bank.size(), 1, bank.dim, bank.rows);
    cmft::save(rows, dir / "coreset.cmft");
    json sources = json::array();
    for (const auto& s : bank.sources) sources.push_back({s.sample_id, s.cell});
    json manifest = {
        {"modality", to_string(bank.modality)},
        {"metric", to_string(bank.metric)},
        {"dim", bank.dim},
        {"rows", bank.size()},
        {"fraction", bank.fraction},
        {"seed", bank.seed},
        {"selected", bank.selected},
        {"sources", sources},
        {"source_checksums", bank.source_checksums},
        {"coreset_checksum", file_checksum(dir / "coreset.cmft")},
    };
    if (bank.projection) {
        manifest["projection"] = {{"in_dim", bank.projection->in_dim},
                                  {"out_dim", bank.projection->out_dim},
                                  {"density", bank.projection->density},
                                  {"seed", bank.projection->seed}};
    } else {
        manifest["projection"] = nullptr;
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

MemoryBank load_bank(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    try {
        const json m = json::parse(read_text(manifest_path));
        MemoryBank bank;
        bank.modality = parse_modality(m.at("modality").get<std::string>());
        bank.metric = parse_metric(m.at("metric").get<std::string>());
        bank.dim = m.at("dim").get<std::size_t>();
        bank.fraction = m.at("fraction").get<double>();
        bank.seed = m.at("seed").get<std::uint64_t>();
        bank.selected = m.at("selected").get<std::vector<std::size_t>>();
        for (const auto& s : m.at("sources")) bank.sources.push_back({s.at(0).get<std::string>(), s.at(1).get<std::size_t>()});
        bank.source_checksums = m.at("source_checksums").get<std::vector<std::string>>();
        if (!m.at("projection").is_null()) {
            const auto& p = m.at("projection");
            bank.projection = ProjectionInfo{p.at("in_dim").get<std::size_t>(), p.at("out_dim").get<std::size_t>(),
                                             p.at("density").get<double>(), p.at("seed").get<std::uint64_t>()};
        }
        FeatureMap rows = cmft::load(dir / "coreset.cmft");
        require(rows.dim() == bank.dim && rows.cells() == m.at("rows").get<std::size_t>(), ErrorKind::Shape,
                dir.string() + ": coreset tensor disagrees with the manifest");
        bank.rows = std::move(rows.data());
        return bank;
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, manifest_path.string() + ": " + e.what());
    }
}

}  // namespace xmad::bank
