#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mpmae/core/parallel.hpp"
#include "mpmae/core/serialize.hpp"
#include "mpmae/synth/synth.hpp"

namespace mpmae::synth {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'D', 'S', 0, 0, 0, 1};
constexpr std::uint32_t kFormatVersion = 1;

std::size_t header_size(int rank) { return 8 + 4 + 1 + 1 + 8 * static_cast<std::size_t>(rank); }

void write_header(std::ofstream& f, DType dtype, const Shape& shape) {
    f.write(kMagic, 8);
    ByteWriter w;
    w.u32(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u64(static_cast<std::uint64_t>(d));
    f.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.data().size()));
}

struct RecordDef {
    std::string name;
    DType dtype;
    Shape per_sample;  // without the leading N
    std::string kind;  // "modality" | "aux"
};

std::vector<RecordDef> record_defs(const schema::ModalityRegistry& reg) {
    const std::int64_t R = reg.config.raster_size;
    std::vector<RecordDef> defs;
    for (const auto& m : reg.modalities) {
        if (m.level == schema::Level::pixel) {
            if (m.kind == schema::Kind::continuous)
                defs.push_back({m.name, DType::f32, {m.band_count, R, R}, "modality"});
            else
                defs.push_back({m.name, DType::i32, {1, R, R}, "modality"});
        } else {
            if (m.kind == schema::Kind::continuous)
                defs.push_back({m.name, DType::f32, {m.band_count}, "modality"});
            else
                defs.push_back({m.name, DType::i32, {1}, "modality"});
        }
    }
    defs.push_back({"sentinel2_valid", DType::u8, {R, R}, "aux"});
    defs.push_back({"product_level", DType::u8, {1}, "aux"});
    defs.push_back({"month", DType::u8, {1}, "aux"});
    defs.push_back({"sample_id", DType::u64, {1}, "aux"});
    defs.push_back({"stratum_id", DType::i32, {1}, "aux"});
    return defs;
}

}  // namespace

void write_array_file(const std::string& path, DType dtype, const Shape& shape, const void* data,
                      std::size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_header(f, dtype, shape);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("short write: " + path);
}

// --- writer -------------------------------------------------------------------

class DatasetWriterImpl {
public:
    DatasetWriterImpl(const std::string& dir, const schema::ModalityRegistry& reg, std::int64_t total)
        : dir_(dir), registry_(reg), total_(total), defs_(record_defs(reg)) {
        std::filesystem::create_directories(dir);
        for (const auto& d : defs_) {
            Shape full = {total_};
            for (auto s : d.per_sample) full.push_back(s);
            auto f = std::make_unique<std::ofstream>(dir + "/" + d.name + ".bin",
                                                     std::ios::binary | std::ios::trunc);
            if (!*f) throw std::runtime_error("cannot open " + d.name + ".bin for write");
            write_header(*f, d.dtype, full);
            files_.push_back(std::move(f));
        }
    }

    void append(const schema::MultiModalSample& s) {
        if (written_ >= total_) throw std::logic_error("dataset writer: too many samples");
        for (std::size_t i = 0; i < defs_.size(); ++i) {
            const auto& d = defs_[i];
            auto& f = *files_[i];
            if (d.name == "sentinel2_valid") {
                put(f, s.optical_valid.data(), s.optical_valid.numel());
            } else if (d.name == "product_level") {
                const std::uint8_t v = static_cast<std::uint8_t>(s.product_level);
                put(f, &v, 1);
            } else if (d.name == "month") {
                put(f, &s.month, 1);
            } else if (d.name == "sample_id") {
                put(f, &s.sample_id, 1);
            } else if (d.name == "stratum_id") {
                put(f, &s.stratum_id, 1);
            } else {
                const auto& spec = registry_.find(d.name);
                if (spec.level == schema::Level::pixel) {
                    if (spec.kind == schema::Kind::continuous) {
                        const auto& t = s.pixel.at(d.name);
                        put(f, t.data(), t.numel());
                    } else {
                        const auto& t = s.pixel_labels.at(d.name);
                        put(f, t.data(), t.numel());
                    }
                } else {
                    if (spec.kind == schema::Kind::continuous) {
                        const auto& v = s.image.at(d.name);
                        put(f, v.data(), static_cast<std::int64_t>(v.size()));
                    } else {
                        const std::int32_t v = s.image_labels.at(d.name);
                        put(f, &v, 1);
                    }
                }
            }
        }
        ++written_;
    }

    void set_split(const std::string& name, std::int64_t offset, std::int64_t count) {
        splits_[name] = {offset, count};
    }

    void finalize(const nlohmann::json& world_echo) {
        if (written_ != total_) throw std::logic_error("dataset writer: sample count mismatch");
        for (auto& f : files_) {
            f->flush();
            if (!*f) throw std::runtime_error("dataset write failed");
            f->close();
        }
        nlohmann::json j;
        j["format_version"] = kFormatVersion;
        j["sample_count"] = total_;
        j["registry"] = registry_.to_json();
        j["registry_hash"] = registry_.hash();
        nlohmann::json recs = nlohmann::json::object();
        for (const auto& d : defs_) {
            Shape full = {total_};
            for (auto s : d.per_sample) full.push_back(s);
            recs[d.name] = {{"file", d.name + ".bin"},
                            {"dtype", static_cast<int>(d.dtype)},
                            {"shape", full},
                            {"kind", d.kind}};
        }
        j["records"] = std::move(recs);
        nlohmann::json sp = nlohmann::json::object();
        for (const auto& [name, r] : splits_) sp[name] = {{"offset", r.offset}, {"count", r.count}};
        j["splits"] = std::move(sp);
        j["stats_file"] = "stats.json";
        j["world"] = world_echo;
        std::ofstream f(dir_ + "/manifest.json", std::ios::trunc);
        f << j.dump(2) << "\n";
        if (!f) throw std::runtime_error("cannot write manifest.json");
    }

private:
    template <typename T>
    void put(std::ofstream& f, const T* p, std::int64_t n) {
        f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
    }

    std::string dir_;
    schema::ModalityRegistry registry_;
    std::int64_t total_;
    std::vector<RecordDef> defs_;
    std::vector<std::unique_ptr<std::ofstream>> files_;
    std::map<std::string, SplitRange> splits_;
    std::int64_t written_ = 0;
};

// --- reader -------------------------------------------------------------------

struct DatasetReader::Record {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;  // full, leading N
    int fd = -1;
    std::size_t header = 0;
    std::int64_t per_sample = 0;  // elements per sample

    ~Record() {
        if (fd >= 0) ::close(fd);
    }

    void read_sample(std::int64_t idx, void* dst) const {
        const std::size_t esz = dtype_size(dtype);
        const std::size_t bytes = static_cast<std::size_t>(per_sample) * esz;
        const off_t off = static_cast<off_t>(header + static_cast<std::size_t>(idx) * bytes);
        std::size_t done = 0;
        while (done < bytes) {
            const ssize_t r = ::pread(fd, static_cast<char*>(dst) + done, bytes - done,
                                      off + static_cast<off_t>(done));
            if (r <= 0) throw CorruptDataset("read failed for record " + name);
            done += static_cast<std::size_t>(r);
        }
    }
};

DatasetReader::DatasetReader(const std::string& dir) : dir_(dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw CorruptDataset("missing manifest: " + dir + "/manifest.json");
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const std::exception& e) {
        throw CorruptDataset(std::string("manifest parse error: ") + e.what());
    }
    const auto ver = j.at("format_version").get<std::uint32_t>();
    if (ver != kFormatVersion)
        throw UnsupportedVersion("dataset format version " + std::to_string(ver));
    sample_count_ = j.at("sample_count").get<std::int64_t>();
    registry_ = schema::ModalityRegistry::from_json(j.at("registry"));
    for (const auto& [name, r] : j.at("splits").items())
        splits_[name] = {r.at("offset").get<std::int64_t>(), r.at("count").get<std::int64_t>()};

    for (const auto& [name, r] : j.at("records").items()) {
        auto rec = std::make_unique<Record>();
        rec->name = name;
        rec->dtype = static_cast<DType>(r.at("dtype").get<int>());
        rec->shape = r.at("shape").get<Shape>();
        const std::string path = dir + "/" + r.at("file").get<std::string>();
        rec->fd = ::open(path.c_str(), O_RDONLY);
        if (rec->fd < 0) throw CorruptDataset("missing record file: " + path);

        // validate the file header and the exact size
        char magic[8];
        if (::pread(rec->fd, magic, 8, 0) != 8 || std::memcmp(magic, kMagic, 4) != 0)
            throw CorruptDataset("bad magic in " + path);
        std::uint8_t hdr[14];
        if (::pread(rec->fd, hdr, 6, 8) != 6) throw CorruptDataset("bad header in " + path);
        std::uint32_t fver = 0;
        std::memcpy(&fver, hdr, 4);
        if (fver != kFormatVersion) throw UnsupportedVersion("record version in " + path);
        if (hdr[4] != static_cast<std::uint8_t>(rec->dtype))
            throw CorruptDataset("dtype mismatch in " + path);
        const int rank = hdr[5];
        if (rank != static_cast<int>(rec->shape.size()))
            throw CorruptDataset("rank mismatch in " + path);
        std::vector<std::uint64_t> dims(static_cast<std::size_t>(rank));
        if (::pread(rec->fd, dims.data(), 8 * static_cast<std::size_t>(rank), 14) !=
            static_cast<ssize_t>(8 * rank))
            throw CorruptDataset("bad dims in " + path);
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            if (dims[static_cast<std::size_t>(d)] !=
                static_cast<std::uint64_t>(rec->shape[static_cast<std::size_t>(d)]))
                throw CorruptDataset("shape mismatch in " + path);
            numel *= rec->shape[static_cast<std::size_t>(d)];
        }
        rec->header = header_size(rank);
        rec->per_sample = numel / rec->shape[0];
        struct stat st {};
        if (::fstat(rec->fd, &st) != 0) throw CorruptDataset("stat failed: " + path);
        const std::size_t expect =
            rec->header + static_cast<std::size_t>(numel) * dtype_size(rec->dtype);
        if (static_cast<std::size_t>(st.st_size) != expect)
            throw CorruptDataset("file size mismatch in " + path + " (expected " +
                                 std::to_string(expect) + ", got " + std::to_string(st.st_size) + ")");
        record_index_[name] = records_.size();
        records_.push_back(std::move(rec));
    }
}

DatasetReader::~DatasetReader() = default;

const DatasetReader::Record& DatasetReader::record(const std::string& name) const {
    auto it = record_index_.find(name);
    if (it == record_index_.end()) throw CorruptDataset("unknown record: " + name);
    return *records_[it->second];
}

SplitRange DatasetReader::split(const std::string& name) const {
    auto it = splits_.find(name);
    if (it == splits_.end()) throw std::invalid_argument("unknown split: " + name);
    return it->second;
}

std::vector<std::string> DatasetReader::split_names() const {
    std::vector<std::string> names;
    for (const auto& [n, r] : splits_) names.push_back(n);
    return names;
}

Tensor<float> DatasetReader::read_float(const std::string& name, std::int64_t idx) const {
    const auto& r = record(name);
    if (r.dtype != DType::f32) throw CorruptDataset("record " + name + " is not f32");
    Shape s(r.shape.begin() + 1, r.shape.end());
    Tensor<float> t(s.empty() ? Shape{1} : s);
    r.read_sample(idx, t.data());
    return t;
}

Tensor<std::int32_t> DatasetReader::read_i32(const std::string& name, std::int64_t idx) const {
    const auto& r = record(name);
    if (r.dtype != DType::i32) throw CorruptDataset("record " + name + " is not i32");
    Shape s(r.shape.begin() + 1, r.shape.end());
    Tensor<std::int32_t> t(s.empty() ? Shape{1} : s);
    r.read_sample(idx, t.data());
    return t;
}

Tensor<std::uint8_t> DatasetReader::read_u8(const std::string& name, std::int64_t idx) const {
    const auto& r = record(name);
    if (r.dtype != DType::u8) throw CorruptDataset("record " + name + " is not u8");
    Shape s(r.shape.begin() + 1, r.shape.end());
    Tensor<std::uint8_t> t(s.empty() ? Shape{1} : s);
    r.read_sample(idx, t.data());
    return t;
}

schema::MultiModalSample DatasetReader::get(std::int64_t idx) const {
    if (idx < 0 || idx >= sample_count_) throw std::invalid_argument("sample index out of range");
    schema::MultiModalSample s;
    for (const auto& m : registry_.modalities) {
        if (m.level == schema::Level::pixel) {
            if (m.kind == schema::Kind::continuous)
                s.pixel[m.name] = read_float(m.name, idx);
            else
                s.pixel_labels[m.name] = read_i32(m.name, idx);
        } else {
            if (m.kind == schema::Kind::continuous) {
                auto t = read_float(m.name, idx);
                s.image[m.name] = std::vector<float>(t.data(), t.data() + t.numel());
            } else {
                s.image_labels[m.name] = read_i32(m.name, idx)[0];
            }
        }
    }
    s.optical_valid = read_u8("sentinel2_valid", idx);
    s.product_level = static_cast<schema::ProductLevel>(read_u8("product_level", idx)[0]);
    s.month = read_u8("month", idx)[0];
    {
        const auto& r = record("sample_id");
        std::uint64_t v = 0;
        r.read_sample(idx, &v);
        s.sample_id = v;
    }
    s.stratum_id = read_i32("stratum_id", idx)[0];
    return s;
}

schema::BandStats DatasetReader::stats() const { return schema::BandStats::load(dir_ + "/stats.json"); }

// --- stats --------------------------------------------------------------------

namespace {

struct Accum {
    std::vector<double> sum, sumsq;
    std::vector<std::int64_t> n;
    void init(int bands) {
        sum.assign(static_cast<std::size_t>(bands), 0.0);
        sumsq.assign(static_cast<std::size_t>(bands), 0.0);
        n.assign(static_cast<std::size_t>(bands), 0);
    }
    void add(int band, double v) {
        sum[static_cast<std::size_t>(band)] += v;
        sumsq[static_cast<std::size_t>(band)] += v * v;
        n[static_cast<std::size_t>(band)] += 1;
    }
    std::vector<schema::BandMoments> moments(const std::string& name,
                                             std::vector<std::string>& warnings) const {
        std::vector<schema::BandMoments> out;
        for (std::size_t b = 0; b < sum.size(); ++b) {
            schema::BandMoments m;
            if (n[b] > 0) {
                m.mean = sum[b] / static_cast<double>(n[b]);
                const double var = std::max(0.0, sumsq[b] / static_cast<double>(n[b]) - m.mean * m.mean);
                m.stdev = std::sqrt(var);
            }
            if (m.stdev < 1e-6) {
                m.stdev = 1e-6;
                warnings.push_back(name + " band " + std::to_string(b) +
                                   ": zero variance, std floored at 1e-6");
            }
            out.push_back(m);
        }
        return out;
    }
};

}  // namespace

schema::BandStats compute_band_stats(const DatasetReader& reader, const std::string& split) {
    const auto range = reader.split(split);
    if (range.count <= 0) throw std::invalid_argument("compute_band_stats: empty split");
    const auto& reg = reader.registry();

    std::map<std::string, Accum> acc;
    Accum optical[2];
    optical[0].init(12);
    optical[1].init(12);
    for (const auto& m : reg.modalities) {
        if (m.kind != schema::Kind::continuous || m.name == "sentinel2") continue;
        acc[m.name].init(m.band_count);
    }

    for (std::int64_t i = range.offset; i < range.offset + range.count; ++i) {
        const auto lvl = static_cast<int>(reader.read_u8("product_level", i)[0]);
        const auto valid = reader.read_u8("sentinel2_valid", i);
        const auto s2 = reader.read_float("sentinel2", i);
        const std::int64_t hw = s2.dim(1) * s2.dim(2);
        for (int b = 0; b < 12; ++b) {
            const float* p = s2.data() + b * hw;
            for (std::int64_t k = 0; k < hw; ++k)
                if (valid[k]) optical[lvl].add(b, p[k]);
        }
        for (const auto& m : reg.modalities) {
            if (m.kind != schema::Kind::continuous || m.name == "sentinel2") continue;
            if (m.level == schema::Level::pixel) {
                const auto t = reader.read_float(m.name, i);
                const std::int64_t mhw = t.dim(1) * t.dim(2);
                for (int b = 0; b < m.band_count; ++b) {
                    const float* p = t.data() + b * mhw;
                    for (std::int64_t k = 0; k < mhw; ++k) acc[m.name].add(b, p[k]);
                }
            } else {
                const auto t = reader.read_float(m.name, i);
                for (int b = 0; b < m.band_count; ++b) acc[m.name].add(b, t[b]);
            }
        }
    }

    schema::BandStats stats;
    for (const auto& [name, a] : acc) stats.modality[name] = a.moments(name, stats.warnings);
    stats.optical["L1C"] = optical[0].moments("sentinel2/L1C", stats.warnings);
    stats.optical["L2A"] = optical[1].moments("sentinel2/L2A", stats.warnings);
    return stats;
}

// --- generation ------------------------------------------------------------------

std::map<int, std::int64_t> generate_dataset(const WorldConfig& config, const GenOptions& gen,
                                             const std::string& out_dir) {
    config.validate();
    const LatentWorld world = generate_latent_world(config);
    const int R = config.raster_size, S = config.world_size;

    std::map<int, EcoArea> areas;
    for (int e = 0; e < config.ecoregion_count; ++e)
        areas[e] = {world.eco_area[static_cast<std::size_t>(e)],
                    world.eco_parent[static_cast<std::size_t>(e)]};

    // candidate window centres per ecoregion (window must fit)
    std::vector<std::vector<std::int64_t>> candidates(static_cast<std::size_t>(config.ecoregion_count));
    std::vector<std::vector<std::int64_t>> biome_candidates(static_cast<std::size_t>(config.biome_count));
    const int lo = R / 2, hi_y = S - R + R / 2;
    for (int cy = lo; cy <= hi_y; ++cy)
        for (int cx = lo; cx <= hi_y; ++cx) {
            const std::int64_t i = static_cast<std::int64_t>(cy) * S + cx;
            candidates[static_cast<std::size_t>(world.ecoregion_map[i])].push_back(i);
            biome_candidates[static_cast<std::size_t>(world.biome_map[i])].push_back(i);
        }

    struct Plan {
        std::int64_t center;
        int month;
    };
    std::vector<Plan> plan;
    std::map<std::string, SplitRange> split_ranges;
    std::map<int, std::int64_t> pretrain_biome_counts;

    const std::vector<std::pair<std::string, std::int64_t>> split_sizes = {
        {"pretrain", gen.pretrain}, {"train", gen.train}, {"val", gen.val}, {"test", gen.test}};

    int split_idx = 0;
    for (const auto& [split_name, n_split] : split_sizes) {
        const std::int64_t offset = static_cast<std::int64_t>(plan.size());
        if (n_split > 0) {
            auto alloc = allocate_stratified(n_split, areas, config.biome_count);
            for (const auto& e : alloc.entries) {
                Rng rng(stream_seed(config.seed, "loc", static_cast<std::uint64_t>(split_idx),
                                    static_cast<std::uint64_t>(e.ecoregion)));
                const auto& cand = !candidates[static_cast<std::size_t>(e.ecoregion)].empty()
                                       ? candidates[static_cast<std::size_t>(e.ecoregion)]
                                       : biome_candidates[static_cast<std::size_t>(e.biome)];
                if (cand.empty())
                    throw std::runtime_error("no feasible window centres for biome " +
                                             std::to_string(e.biome));
                for (std::int64_t k = 0; k < e.count; ++k) {
                    const std::int64_t c = cand[static_cast<std::size_t>(
                        rng.uniform_int(static_cast<std::int64_t>(cand.size())))];
                    const int month = 1 + static_cast<int>(rng.uniform_int(12));
                    plan.push_back({c, month});
                }
                if (split_name == "pretrain") pretrain_biome_counts[e.biome] += e.count;
            }
        }
        split_ranges[split_name] = {offset, static_cast<std::int64_t>(plan.size()) - offset};
        ++split_idx;
    }

    DatasetWriterImpl writer(
        out_dir, schema::build_modality_registry({R, config.biome_count, config.ecoregion_count}),
        static_cast<std::int64_t>(plan.size()));
    for (const auto& [name, r] : split_ranges) writer.set_split(name, r.offset, r.count);

    const std::int64_t total = static_cast<std::int64_t>(plan.size());
    const std::int64_t batch = 64;
    std::vector<schema::MultiModalSample> buf(static_cast<std::size_t>(batch));
    for (std::int64_t base = 0; base < total; base += batch) {
        const std::int64_t n = std::min(batch, total - base);
        parallel_for(n, [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t k = b; k < e; ++k) {
                const auto& p = plan[static_cast<std::size_t>(base + k)];
                const int cy = static_cast<int>(p.center / S), cx = static_cast<int>(p.center % S);
                Rng rng(stream_seed(config.seed, "sample", static_cast<std::uint64_t>(base + k)));
                auto s = render_sample(world, cy - R / 2, cx - R / 2, p.month, rng);
                s.sample_id = static_cast<std::uint64_t>(base + k);
                buf[static_cast<std::size_t>(k)] = std::move(s);
            }
        });
        for (std::int64_t k = 0; k < n; ++k) writer.append(buf[static_cast<std::size_t>(k)]);
    }
    writer.finalize(config.to_json());

    DatasetReader reader(out_dir);
    const std::string stats_split = split_ranges["pretrain"].count > 0 ? "pretrain" : "train";
    auto stats = compute_band_stats(reader, stats_split);
    stats.save(out_dir + "/stats.json");
    return pretrain_biome_counts;
}

// Writes an ad-hoc list of samples as a dataset. Without explicit splits a
// single "all" split covers everything.
void write_dataset(const std::vector<schema::MultiModalSample>& samples,
                   const schema::ModalityRegistry& registry, const std::string& dir,
                   const std::map<std::string, SplitRange>& splits) {
    if (samples.empty()) throw std::invalid_argument("write_dataset: empty sample list");
    DatasetWriterImpl writer(dir, registry, static_cast<std::int64_t>(samples.size()));
    for (const auto& s : samples) writer.append(s);
    if (splits.empty()) {
        writer.set_split("all", 0, static_cast<std::int64_t>(samples.size()));
    } else {
        for (const auto& [name, r] : splits) writer.set_split(name, r.offset, r.count);
    }
    writer.finalize(nlohmann::json::object());
}

}  // namespace mpmae::synth
