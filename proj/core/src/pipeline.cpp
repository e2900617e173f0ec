#include "latshield/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "latshield/attack.hpp"
#include "latshield/image_io.hpp"
#include "latshield/metrics.hpp"
#include "latshield/swapdefend.hpp"
#include "latshield/trainer.hpp"

namespace fs = std::filesystem;

namespace latshield {

namespace {

struct Paths {
    fs::path out, data, ckpt, protected_, swapped, reports;
    explicit Paths(const RunConfig& cfg) : out(cfg.str("output_dir")) {
        data = out / "data";
        ckpt = out / "ckpt";
        protected_ = out / "protected";
        swapped = out / "swapped";
        reports = out / "reports";
    }
};

void require(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("missing prerequisite: " + p.string());
}

std::string fmt(const char* f, int a, int b = -1) {
    char buf[64];
    if (b < 0)
        std::snprintf(buf, sizeof(buf), f, a);
    else
        std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

SigmaForm sigma_form_from(const RunConfig& cfg) {
    const std::string v = cfg.str("schedule.sigma_form");
    if (v == "paper") return SigmaForm::paper;
    if (v == "ddim_sqrt") return SigmaForm::ddim_sqrt;
    throw ConfigError("config: schedule.sigma_form must be paper or ddim_sqrt, got " + v);
}

AttackConfig attack_config_from(const RunConfig& cfg) {
    AttackConfig a;
    a.epsilon = cfg.real("attack.epsilon");
    a.alpha = cfg.real("attack.alpha");
    a.n_iters = cfg.integer("attack.n_iters");
    a.t_inf = cfg.integer("schedule.t_inf");
    a.k_sdedit = cfg.integer("attack.k_sdedit");
    const std::string rule = cfg.str("attack.lambda_rule");
    if (rule == "dynamic")
        a.lambda_rule = LambdaRule::dynamic;
    else if (rule == "fixed")
        a.lambda_rule = LambdaRule::fixed;
    else
        throw ConfigError("config: attack.lambda_rule must be dynamic or fixed, got " + rule);
    a.lambda_value = cfg.real("attack.lambda_value");
    a.lambda_freeze = cfg.boolean("attack.lambda_freeze");
    const std::string sg = cfg.str("attack.sdedit_grad");
    if (sg == "through")
        a.sdedit_grad = SdeditGrad::through;
    else if (sg == "straight")
        a.sdedit_grad = SdeditGrad::straight;
    else
        throw ConfigError("config: attack.sdedit_grad must be through or straight, got " + sg);
    const std::string form = cfg.str("attack.id_loss_form");
    if (form == "one_minus_cos")
        a.id_loss_form = IdLossForm::one_minus_cos;
    else if (form == "cos")
        a.id_loss_form = IdLossForm::cos_literal;
    else
        throw ConfigError("config: attack.id_loss_form must be one_minus_cos or cos, got " + form);
    a.w = cfg.real("attack.w");
    return a;
}

TrainConfig train_config_from(const RunConfig& cfg, const std::string& stage) {
    TrainConfig t;
    t.epochs = cfg.integer("train." + stage + ".epochs");
    t.batch_size = cfg.integer("train." + stage + ".batch_size");
    t.lr = cfg.real("train." + stage + ".lr");
    if (stage == "diff") t.dropout_p = cfg.real("train.diff.dropout_p");
    if (stage == "id") t.margin_scale = cfg.real("train.id.scale");
    t.seed = mix_seed(cfg.seed("master_seed"), stage == "ae" ? 0x7AE : stage == "id" ? 0x71D : 0x7DF);
    return t;
}

/// Per-identity source image: the first held-out sample (falls back to the
/// first sample if the identity has no held-out ones).
int source_index(const Dataset& ds, int identity) {
    int first = -1;
    for (size_t i = 0; i < ds.images.size(); ++i) {
        if (ds.labels[i] != identity) continue;
        if (first < 0) first = static_cast<int>(i);
        if (ds.is_eval[i]) return static_cast<int>(i);
    }
    if (first < 0) throw ValueError("pipeline: identity " + std::to_string(identity) + " missing");
    return first;
}

int target_index(const Dataset& ds, int identity) {
    for (size_t i = 0; i < ds.images.size(); ++i)
        if (ds.labels[i] == identity && !ds.is_eval[i]) return static_cast<int>(i);
    return source_index(ds, identity);
}

int target_identity(int src_identity, int j, int n_ids) {
    return (src_identity + 1 + j) % n_ids; // never equals src for j < n_ids - 1
}

uint64_t pair_seed(uint64_t master, int src, int tgt) {
    return mix_seed(mix_seed(master, 0x5AB0 + src), static_cast<uint64_t>(tgt));
}

ModelBundle load_stage_ckpt(const Paths& p, const std::string& stage) {
    const fs::path dir = p.ckpt / (stage + ".ckpt");
    require(dir);
    return load_bundle(dir.string());
}

struct EvalSources {
    std::vector<int> identities;
    std::vector<Tensor> clean, x_adv, x_adv_diff;
};

EvalSources load_sources(const Paths& p, const Dataset& ds, int n_sources) {
    EvalSources s;
    for (int i = 0; i < n_sources; ++i) {
        s.identities.push_back(i);
        s.clean.push_back(ds.images[source_index(ds, i)]);
        const fs::path blob = p.protected_ / fmt("src_%04d.blob", i);
        require(blob / "manifest.json");
        auto tensors = load_tensors(blob.string());
        std::map<std::string, Tensor> byname(tensors.begin(), tensors.end());
        s.x_adv.push_back(byname.at("x_adv"));
        s.x_adv_diff.push_back(byname.at("x_adv_diff"));
    }
    return s;
}

const std::vector<std::string> kConditions = {"clean", "x_adv", "x_adv_diff"};
const std::vector<std::string> kDefenses = {"none", "blur", "jpeg", "purify"};

DefenseSpec defense_from(const RunConfig& cfg, const std::string& name, uint64_t seed) {
    DefenseSpec d;
    d.seed = seed;
    if (name == "none") {
        d.kind = DefenseKind::none;
    } else if (name == "blur") {
        d.kind = DefenseKind::blur;
        d.sigma = cfg.real("defense.blur_sigma");
    } else if (name == "jpeg") {
        d.kind = DefenseKind::jpeg;
        d.quality = cfg.integer("defense.jpeg_quality");
    } else if (name == "purify") {
        d.kind = DefenseKind::purify;
        d.k_purify = cfg.integer("defense.purify_k");
    } else {
        throw ConfigError("config: unknown defense " + name);
    }
    return d;
}

} // namespace

NoiseSchedule schedule_from_config(const RunConfig& cfg) {
    return make_linear_schedule(cfg.integer("schedule.t_train"), cfg.real("schedule.beta_start"),
                                cfg.real("schedule.beta_end"), cfg.integer("schedule.t_inf"));
}

void cmd_dataset(const RunConfig& cfg) {
    Paths p(cfg);
    make_dataset(cfg.integer("dataset.n_identities"), cfg.integer("dataset.samples_per_identity"),
                 cfg.seed("master_seed"), p.data.string());
    cfg.write_resolved(p.out.string());
}

void cmd_train(const RunConfig& cfg, const std::string& stage) {
    if (stage != "ae" && stage != "id" && stage != "diff")
        throw ConfigError("train: stage must be ae, id, or diff, got " + stage);
    Paths p(cfg);
    require(p.data / "meta.json");
    Dataset ds = load_dataset(p.data.string());
    NoiseSchedule sched = schedule_from_config(cfg);
    TrainConfig tc = train_config_from(cfg, stage);

    ModelBundle m = stage == "ae" ? init_bundle(cfg.seed("arch_seed"))
                    : stage == "id" ? load_stage_ckpt(p, "ae")
                                    : load_stage_ckpt(p, "id");
    TrainReport rep;
    if (stage == "ae")
        rep = train_autoencoder(ds, m, tc);
    else if (stage == "id")
        rep = train_identity(ds, m, tc);
    else
        rep = train_diffusion(ds, m, tc, sched);

    save_bundle(m, (p.ckpt / (stage + ".ckpt")).string());
    write_trace_csv(rep, (p.reports / ("train_" + stage + "_trace.csv")).string());
    cfg.write_resolved(p.out.string());
}

void run_training(const RunConfig& cfg) {
    cmd_dataset(cfg);
    cmd_train(cfg, "ae");
    cmd_train(cfg, "id");
    cmd_train(cfg, "diff");
}

void cmd_attack(const RunConfig& cfg) {
    Paths p(cfg);
    require(p.data / "meta.json");
    for (const char* stage : {"ae", "id", "diff"}) require(p.ckpt / (std::string(stage) + ".ckpt"));
    Dataset ds = load_dataset(p.data.string());
    ModelBundle m = load_bundle((p.ckpt / "diff.ckpt").string());
    NoiseSchedule sched = schedule_from_config(cfg);
    AttackConfig ac = attack_config_from(cfg);
    const int n_sources = std::min(cfg.integer("attack.n_sources"), ds.n_identities);
    fs::create_directories(p.protected_);

    for (int i = 0; i < n_sources; ++i) {
        const Tensor& x = ds.images[source_index(ds, i)];
        AttackConfig ai = ac;
        ai.seed = mix_seed(cfg.seed("master_seed"), 0xA00 + i);
        AttackResult r = pgd_attack(m, x, ai, sched);
        write_pgm((p.protected_ / fmt("src_%04d_adv.pgm", i)).string(), r.x_adv);
        write_pgm((p.protected_ / fmt("src_%04d_adv_diff.pgm", i)).string(), r.x_adv_diff);
        save_tensors((p.protected_ / fmt("src_%04d.blob", i)).string(),
                     {{"x_adv", r.x_adv}, {"x_adv_diff", r.x_adv_diff}, {"delta", r.delta_final}});
        write_attack_trace_csv(r.trace, (p.protected_ / fmt("src_%04d_trace.csv", i)).string());
    }
    cfg.write_resolved(p.out.string());
}

void cmd_swap(const RunConfig& cfg) {
    Paths p(cfg);
    require(p.data / "meta.json");
    require(p.ckpt / "diff.ckpt");
    Dataset ds = load_dataset(p.data.string());
    ModelBundle m = load_bundle((p.ckpt / "diff.ckpt").string());
    NoiseSchedule sched = schedule_from_config(cfg);
    const int n_sources = std::min(cfg.integer("attack.n_sources"), ds.n_identities);
    const int n_targets = cfg.integer("swap.n_targets");
    fs::create_directories(p.swapped);

    for (int i = 0; i < n_sources; ++i) {
        const Tensor& x = ds.images[source_index(ds, i)];
        for (int j = 0; j < n_targets; ++j) {
            const int tid = target_identity(i, j, ds.n_identities);
            const Tensor& tgt = ds.images[target_index(ds, tid)];
            SwapConfig sc;
            sc.w = cfg.real("swap.w");
            sc.k_swap = cfg.integer("swap.k_swap");
            sc.seed = pair_seed(cfg.seed("master_seed"), i, tid);
            Tensor sw = face_swap(m, x, tgt, sc, sched);
            write_pgm((p.swapped / fmt("src%04d_tgt%04d.pgm", i, tid)).string(), sw);
        }
    }
    cfg.write_resolved(p.out.string());
}

void cmd_defend(const RunConfig& cfg) {
    Paths p(cfg);
    require(p.protected_);
    require(p.ckpt / "diff.ckpt");
    Dataset ds = load_dataset(p.data.string());
    ModelBundle m = load_bundle((p.ckpt / "diff.ckpt").string());
    NoiseSchedule sched = schedule_from_config(cfg);
    const int n_sources = std::min(cfg.integer("attack.n_sources"), ds.n_identities);
    EvalSources srcs = load_sources(p, ds, n_sources);
    fs::create_directories(p.protected_ / "defended");

    for (int i = 0; i < n_sources; ++i) {
        for (const auto& dn : kDefenses) {
            if (dn == "none") continue;
            DefenseSpec spec =
                defense_from(cfg, dn, mix_seed(cfg.seed("master_seed"), 0x9F00 + i));
            Tensor out = apply_defense(m, srcs.x_adv[i], spec, sched);
            write_pgm((p.protected_ / "defended" / fmt((dn + "_src%04d.pgm").c_str(), i)).string(),
                      out);
        }
    }
    cfg.write_resolved(p.out.string());
}

void cmd_eval(const RunConfig& cfg) {
    Paths p(cfg);
    require(p.data / "meta.json");
    require(p.ckpt / "diff.ckpt");
    require(p.protected_);
    Dataset ds = load_dataset(p.data.string());
    ModelBundle m = load_bundle((p.ckpt / "diff.ckpt").string());
    NoiseSchedule sched = schedule_from_config(cfg);
    const int n_sources = std::min(cfg.integer("attack.n_sources"), ds.n_identities);
    const int n_targets = cfg.integer("swap.n_targets");
    EvalSources srcs = load_sources(p, ds, n_sources);

    std::vector<std::string> header = {"condition", "defense", "src_id",   "tgt_id",
                                       "psnr",      "ssim",    "cs_src",   "cs_att",
                                       "src_psnr",  "src_ssim"};
    for (int k = 0; k < kEmbedDim; ++k) header.push_back("f" + std::to_string(k));
    CsvWriter pairs((p.reports / "pairs.csv").string(), header);

    SwapConfig sc;
    sc.w = cfg.real("swap.w");
    sc.k_swap = cfg.integer("swap.k_swap");

    for (int i = 0; i < n_sources; ++i) {
        const Tensor& x = srcs.clean[i];
        Tensor emb_x = embed_identity(m, as_batch(x));

        // Defended source images, shared across targets.
        std::vector<std::vector<Tensor>> defended(kConditions.size());
        for (size_t ci = 0; ci < kConditions.size(); ++ci) {
            const Tensor& base = ci == 0 ? x : ci == 1 ? srcs.x_adv[i] : srcs.x_adv_diff[i];
            for (size_t di = 0; di < kDefenses.size(); ++di) {
                DefenseSpec spec = defense_from(
                    cfg, kDefenses[di],
                    mix_seed(cfg.seed("master_seed"), 0x9F00 + i * 8 + static_cast<int>(ci)));
                defended[ci].push_back(apply_defense(m, base, spec, sched));
            }
        }

        for (int j = 0; j < n_targets; ++j) {
            const int tid = target_identity(i, j, ds.n_identities);
            const Tensor& tgt = ds.images[target_index(ds, tid)];
            sc.seed = pair_seed(cfg.seed("master_seed"), i, tid);
            Tensor swap_clean = face_swap(m, x, tgt, sc, sched);
            Tensor emb_clean_swap = embed_identity(m, as_batch(swap_clean));
            const double cs_src = cosine_of_embeddings(emb_clean_swap, emb_x);

            for (size_t ci = 0; ci < kConditions.size(); ++ci) {
                for (size_t di = 0; di < kDefenses.size(); ++di) {
                    const Tensor& src_img = defended[ci][di];
                    Tensor sw = (ci == 0 && di == 0) ? swap_clean : face_swap(m, src_img, tgt, sc, sched);
                    Tensor emb_sw = (ci == 0 && di == 0) ? emb_clean_swap
                                                         : embed_identity(m, as_batch(sw));
                    const double cs_att = cosine_of_embeddings(emb_sw, emb_x);
                    std::vector<std::string> row = {
                        kConditions[ci],
                        kDefenses[di],
                        std::to_string(i),
                        std::to_string(tid),
                        CsvWriter::num(psnr(swap_clean, sw)),
                        CsvWriter::num(ssim(swap_clean, sw)),
                        CsvWriter::num(cs_src),
                        CsvWriter::num(cs_att),
                        CsvWriter::num(psnr(x, src_img)),
                        CsvWriter::num(ssim(x, src_img))};
                    for (int k = 0; k < kEmbedDim; ++k) row.push_back(CsvWriter::num(emb_sw.at(k)));
                    pairs.row(row);
                }
            }
        }
    }
    cfg.write_resolved(p.out.string());
}

void cmd_report(const RunConfig& cfg) {
    Paths p(cfg);
    const fs::path pairs_csv = p.reports / "pairs.csv";
    require(pairs_csv);
    auto rows = read_csv(pairs_csv.string());
    if (rows.size() < 2) throw ValueError("report: pairs.csv has no data rows");

    struct Group {
        std::vector<double> psnr, ssim, cs_src, cs_att, src_psnr, src_ssim;
        std::vector<std::vector<double>> feats;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& c = rows[r];
        if (c.size() != 10 + kEmbedDim)
            throw ValueError("report: malformed pairs.csv row " + std::to_string(r));
        Group& g = groups[{c[0], c[1]}];
        g.psnr.push_back(std::stod(c[4]));
        g.ssim.push_back(std::stod(c[5]));
        g.cs_src.push_back(std::stod(c[6]));
        g.cs_att.push_back(std::stod(c[7]));
        g.src_psnr.push_back(std::stod(c[8]));
        g.src_ssim.push_back(std::stod(c[9]));
        std::vector<double> f(kEmbedDim);
        for (int k = 0; k < kEmbedDim; ++k) f[k] = std::stod(c[10 + k]);
        g.feats.push_back(std::move(f));
    }

    const auto ref_it = groups.find({"clean", "none"});
    if (ref_it == groups.end()) throw ValueError("report: pairs.csv missing clean/none rows");
    const size_t n_ref = ref_it->second.feats.size();
    for (const auto& [key, g] : groups)
        if (g.feats.size() != n_ref)
            throw ValueError("report: mismatched pair lists for " + key.first + "/" + key.second);

    std::vector<MetricsRow> report;
    CsvWriter fidelity((p.reports / "fidelity.csv").string(),
                       {"condition", "defense", "src_psnr", "src_ssim"});
    for (const auto& cond : kConditions) {
        for (const auto& def : kDefenses) {
            auto it = groups.find({cond, def});
            if (it == groups.end()) continue;
            const Group& g = it->second;
            report.push_back(aggregate_row(cond, def, g.psnr, g.ssim, g.cs_src, g.cs_att,
                                           ref_it->second.feats, g.feats));
            double sp = 0, ss = 0;
            for (size_t i = 0; i < g.src_psnr.size(); ++i) {
                sp += g.src_psnr[i];
                ss += g.src_ssim[i];
            }
            fidelity.row({cond, def, CsvWriter::num(sp / g.src_psnr.size()),
                          CsvWriter::num(ss / g.src_ssim.size())});
        }
    }
    write_report_csv(report, (p.reports / "eval.csv").string());

    CsvWriter sig((p.reports / "significance.csv").string(), {"comparison", "n", "p_value"});
    auto add_sig = [&](const std::string& name, const std::vector<double>& hi,
                       const std::vector<double>& lo) {
        sig.row({name, std::to_string(hi.size()), CsvWriter::num(sign_test_p_value(hi, lo))});
    };
    const Group& clean_none = ref_it->second;
    for (const auto& cond : {std::string("x_adv"), std::string("x_adv_diff")}) {
        for (const auto& def : kDefenses) {
            auto it = groups.find({cond, def});
            if (it == groups.end()) continue;
            add_sig("psnr_clean_gt_" + cond + "_" + def, clean_none.psnr, it->second.psnr);
            add_sig("cs_src_gt_cs_att_" + cond + "_" + def, it->second.cs_src, it->second.cs_att);
        }
    }
    cfg.write_resolved(p.out.string());
}

void cmd_transfer(const RunConfig& cfg) {
    Paths p(cfg);
    require(p.data / "meta.json");
    require(p.ckpt / "diff.ckpt");
    require(p.protected_);
    if (cfg.seed("transfer.arch_seed") == cfg.seed("arch_seed"))
        throw ConfigError("transfer: transfer.arch_seed must differ from arch_seed");

    Dataset ds = load_dataset(p.data.string());
    ModelBundle a = load_bundle((p.ckpt / "diff.ckpt").string());
    NoiseSchedule sched = schedule_from_config(cfg);

    // Independently initialized victim bundle B, trained on the same data.
    const fs::path b_ckpt = p.ckpt / "transfer.ckpt";
    ModelBundle b;
    if (fs::exists(b_ckpt / "manifest.json")) {
        b = load_bundle(b_ckpt.string());
    } else {
        b = init_bundle(cfg.seed("transfer.arch_seed"));
        TrainConfig tae = train_config_from(cfg, "ae");
        TrainConfig tid = train_config_from(cfg, "id");
        TrainConfig tdf = train_config_from(cfg, "diff");
        tae.seed = mix_seed(tae.seed, 0xB);
        tid.seed = mix_seed(tid.seed, 0xB);
        tdf.seed = mix_seed(tdf.seed, 0xB);
        train_autoencoder(ds, b, tae);
        train_identity(ds, b, tid);
        train_diffusion(ds, b, tdf, sched);
        save_bundle(b, b_ckpt.string());
    }
    if (b.arch_seed == a.arch_seed)
        throw ConfigError("transfer: victim bundle has the surrogate's arch_seed");

    const int n_sources = std::min(cfg.integer("attack.n_sources"), ds.n_identities);
    const int n_targets = cfg.integer("swap.n_targets");
    EvalSources srcs = load_sources(p, ds, n_sources);
    SwapConfig sc;
    sc.w = cfg.real("swap.w");
    sc.k_swap = cfg.integer("swap.k_swap");

    struct Acc {
        std::vector<double> psnr, ssim, cs_src, cs_att;
        std::vector<std::vector<double>> feats_clean, feats_adv;
        std::vector<double> per_id_src, per_id_att;
    };
    std::map<std::string, Acc> acc; // "self" (A) and "transfer" (B)

    for (int i = 0; i < n_sources; ++i) {
        const Tensor& x = srcs.clean[i];
        std::map<std::string, std::vector<double>> id_src, id_att;
        for (int j = 0; j < n_targets; ++j) {
            const int tid = target_identity(i, j, ds.n_identities);
            const Tensor& tgt = ds.images[target_index(ds, tid)];
            sc.seed = pair_seed(cfg.seed("master_seed"), i, tid);
            const std::vector<std::pair<std::string, const ModelBundle*>> victims = {
                {"self", &a}, {"transfer", &b}};
            for (const auto& [label, victim] : victims) {
                Tensor sw_clean = face_swap(*victim, x, tgt, sc, sched);
                Tensor sw_adv = face_swap(*victim, srcs.x_adv[i], tgt, sc, sched);
                Tensor emb_x = embed_identity(*victim, as_batch(x));
                Tensor emb_c = embed_identity(*victim, as_batch(sw_clean));
                Tensor emb_a = embed_identity(*victim, as_batch(sw_adv));
                Acc& g = acc[label];
                g.psnr.push_back(psnr(sw_clean, sw_adv));
                g.ssim.push_back(ssim(sw_clean, sw_adv));
                const double cs = cosine_of_embeddings(emb_c, emb_x);
                const double ca = cosine_of_embeddings(emb_a, emb_x);
                g.cs_src.push_back(cs);
                g.cs_att.push_back(ca);
                id_src[label].push_back(cs);
                id_att[label].push_back(ca);
                std::vector<double> fc(kEmbedDim), fa(kEmbedDim);
                for (int k = 0; k < kEmbedDim; ++k) {
                    fc[k] = emb_c.at(k);
                    fa[k] = emb_a.at(k);
                }
                g.feats_clean.push_back(std::move(fc));
                g.feats_adv.push_back(std::move(fa));
            }
        }
        for (const auto& label : {"self", "transfer"}) {
            acc[label].per_id_src.push_back(median(id_src[label]));
            acc[label].per_id_att.push_back(median(id_att[label]));
        }
    }

    std::vector<MetricsRow> report;
    std::vector<std::vector<std::string>> extra;
    CsvWriter sig((p.reports / "transfer_significance.csv").string(),
                  {"comparison", "n", "p_value"});
    for (const auto& label : {"self", "transfer"}) {
        const Acc& g = acc[label];
        report.push_back(aggregate_row("x_adv", "none", g.psnr, g.ssim, g.cs_src, g.cs_att,
                                       g.feats_clean, g.feats_adv));
        extra.push_back({label});
        sig.row({std::string("cs_src_gt_cs_att_") + label, std::to_string(g.per_id_src.size()),
                 CsvWriter::num(sign_test_p_value(g.per_id_src, g.per_id_att))});
    }
    write_report_csv(report, (p.reports / "transfer.csv").string(), {"surrogate"}, extra);
    cfg.write_resolved(p.out.string());
}

} // namespace latshield
