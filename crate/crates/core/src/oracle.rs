//! Straight-line reference implementations used as test oracles. They share
//! no code with the tape kernels: plain nested loops over `Vec<Vec<f64>>`.

use crate::autodiff::{ParamStore, Tensor};
use crate::encoders::{GroundingTransformer, LocalEncoder, SalientTransformer};
use crate::nn::{Linear, Mlp, MultiHeadAttention, SalienceGate};
use crate::refine::{Grb, GrbFlags};
use crate::seed::{FusionQuery, SeedGenerator};

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_diff(a: &Mat, t: &Tensor) -> f64 {
    assert_eq!(a.len(), t.rows(), "row count");
    let mut m = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        assert_eq!(row.len(), t.cols(), "col count");
        for (j, v) in row.iter().enumerate() {
            m = m.max((v - t.get2(i, j)).abs());
        }
    }
    m
}

pub fn linear(x: &Mat, store: &ParamStore, l: &Linear) -> Mat {
    let w = &store.get(l.weight).tensor;
    x.iter()
        .map(|row| {
            (0..l.out_dim)
                .map(|j| {
                    let b = l.bias.map_or(0.0, |b| store.get(b).tensor.data()[j]);
                    let mut s = 0.0;
                    for (k, v) in row.iter().enumerate() {
                        s += v * w.get2(k, j);
                    }
                    s + b
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn mlp(x: &Mat, store: &ParamStore, m: &Mlp) -> Mat {
    let mut h = x.clone();
    for (i, l) in m.layers.iter().enumerate() {
        h = linear(&h, store, l);
        if i + 1 < m.layers.len() {
            h = relu(&h);
        }
    }
    h
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn concat(parts: &[&Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

pub fn col_max(x: &Mat) -> Vec<f64> {
    (0..x[0].len())
        .map(|j| x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn attention(q: &Mat, kv: &Mat, store: &ParamStore, a: &MultiHeadAttention) -> Mat {
    let qq = linear(q, store, &a.query);
    let kk = linear(kv, store, &a.key);
    let vv = linear(kv, store, &a.value);
    let hd = a.spec.head_dim();
    let mut mixed = vec![vec![0.0; a.spec.model_dim]; q.len()];
    for h in 0..a.spec.heads {
        let cols = h * hd..(h + 1) * hd;
        for (i, qi) in qq.iter().enumerate() {
            let logits: Vec<f64> = kk
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let w = softmax(&logits);
            for c in cols.clone() {
                mixed[i][c] = w.iter().zip(&vv).map(|(wj, vj)| wj * vj[c]).sum();
            }
        }
    }
    linear(&mixed, store, &a.output)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn gate(a: &Mat, x: &Mat, store: &ParamStore, g: &SalienceGate) -> Mat {
    let logits = mlp(&concat(&[a, x]), store, &g.mlp);
    a.iter()
        .zip(x)
        .zip(&logits)
        .map(|((ar, xr), lr)| {
            ar.iter()
                .zip(xr)
                .zip(lr)
                .map(|((av, xv), l)| {
                    let s = sigmoid(*l);
                    (1.0 - s) * av + s * xv
                })
                .collect()
        })
        .collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Full sort of every pairwise distance, ties to the lowest index.
pub fn knn(q: &Mat, r: &Mat, k: usize) -> Vec<Vec<usize>> {
    q.iter()
        .map(|qi| {
            let mut all: Vec<(f64, usize)> = r.iter().enumerate().map(|(j, rj)| (dist(qi, rj), j)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|p| p.1).collect()
        })
        .collect()
}

/// Greedy max-min selection recomputing every min-distance from scratch.
pub fn fps(p: &Mat, m: usize, seed: usize) -> Vec<usize> {
    let mut chosen = vec![seed];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, pi) in p.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| dist(pi, &p[c])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// Inverse distance weighted mean of `payload` rows at the `k` nearest `keys`.
pub fn idw(q: &Mat, keys: &Mat, payload: &Mat, k: usize) -> Mat {
    let nn = knn(q, keys, k);
    q.iter()
        .zip(&nn)
        .map(|(qi, idx)| {
            let w: Vec<f64> = idx.iter().map(|&j| 1.0 / (dist(qi, &keys[j]) + 1e-8)).collect();
            let z: f64 = w.iter().sum();
            (0..payload[0].len())
                .map(|c| idx.iter().zip(&w).map(|(&j, wj)| wj * payload[j][c]).sum::<f64>() / z)
                .collect()
        })
        .collect()
}

pub fn centroid_nearest(p: &Mat) -> usize {
    let n = p.len() as f64;
    let c: Vec<f64> = (0..3).map(|j| p.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut best = (f64::INFINITY, 0);
    for (i, r) in p.iter().enumerate() {
        let d = dist(r, &c);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

pub fn rows(pc: &crate::geom::PointCloud) -> Mat {
    pc.points().iter().map(|p| p.to_vec()).collect()
}

/// Edge-conv encoder: FPS centers seeded at the centroid-nearest point, two
/// edge layers over the raw kNN graph, plus the positional embedding.
pub fn encode(p: &Mat, store: &ParamStore, enc: &LocalEncoder, phi: &Mlp, n_e: usize, k: usize) -> (Vec<usize>, Mat) {
    let centers = fps(p, n_e, centroid_nearest(p));
    let nn = knn(p, p, k);
    let edge_max = |h: &Mat, c: usize, layer: &Linear| -> Vec<f64> {
        let edges: Mat = nn[c]
            .iter()
            .map(|&j| {
                let mut e: Vec<f64> = h[j].iter().zip(&h[c]).map(|(a, b)| a - b).collect();
                e.extend_from_slice(&h[c]);
                e
            })
            .collect();
        col_max(&linear(&edges, store, layer))
    };
    let h1: Mat = (0..p.len()).map(|i| edge_max(p, i, &enc.edge1)).collect();
    let h1 = relu(&h1);
    let f1: Mat = centers.iter().map(|&c| edge_max(&h1, c, &enc.edge2)).collect();
    let cpts: Mat = centers.iter().map(|&c| p[c].clone()).collect();
    (centers, add(&f1, &mlp(&cpts, store, phi)))
}

pub fn salient(f: &Mat, centers: &Mat, store: &ParamStore, st: &SalientTransformer, k: usize) -> Mat {
    let a = attention(f, f, store, &st.attn);
    let m = mlp(f, store, &st.local);
    let x: Mat = knn(centers, centers, k.min(centers.len()))
        .iter()
        .map(|idx| col_max(&idx.iter().map(|&j| m[j].clone()).collect()))
        .collect();
    gate(&a, &x, store, &st.gate)
}

pub fn grounding(g: &Mat, o: &Mat, store: &ParamStore, gt: &GroundingTransformer, ground: bool) -> Mat {
    let a = attention(g, g, store, &gt.self_attn);
    let x = if ground {
        attention(g, o, store, &gt.cross_attn)
    } else {
        a.clone()
    };
    gate(&a, &x, store, &gt.gate)
}

/// Coarse scaffold from final prior and observation features.
pub fn seed(fg: &Mat, fo: &Mat, store: &ParamStore, g: &SeedGenerator, ground: bool) -> Mat {
    let pg = vec![col_max(fg)];
    let po = vec![col_max(fo)];
    let a = match g.cfg.fusion_query {
        FusionQuery::Generative => attention(&pg, fo, store, &g.fusion_attn),
        FusionQuery::Observation => attention(&po, fg, store, &g.fusion_attn),
    };
    let fused = mlp(&concat(&[&a, &po]), store, &g.fusion_mlp);
    let seeds: Mat = mlp(&fused, store, &g.expand)[0]
        .chunks(g.cfg.dim)
        .map(|c| c.to_vec())
        .collect();
    let gr = if ground {
        attention(&seeds, fo, store, &g.ground_attn)
    } else {
        vec![vec![0.0; g.cfg.dim]; seeds.len()]
    };
    let rep = vec![fused[0].clone(); seeds.len()];
    mlp(&concat(&[&rep, &seeds, &gr]), store, &g.coarse)
}

pub fn assoc(p: &Mat, c: &Mat, fo: &Mat, fg: &Mat, k: usize, dual: bool) -> Mat {
    let obs = idw(p, c, fo, k);
    let gen = if dual { idw(&obs, fg, fg, k) } else { obs.clone() };
    concat(&[&obs, &gen])
}

pub fn cssc(store: &ParamStore, b: &Grb, p: &Mat, f_as: &Mat, cp: &Mat, cf: &Mat, structure: bool) -> Mat {
    let fq = mlp(f_as, store, &b.query);
    if !structure {
        return fq;
    }
    let keys = linear(cf, store, &b.key);
    let vals = linear(cf, store, &b.value);
    let nn = knn(p, cp, b.cfg.k);
    let mut out = fq.clone();
    for (i, idx) in nn.iter().enumerate() {
        let logits: Vec<f64> = idx
            .iter()
            .map(|&j| {
                let rel: Vec<f64> = (0..3).map(|c| p[i][c] - cp[j][c]).collect();
                let pos = mlp(&vec![rel], store, &b.phi);
                let h: Vec<f64> = (0..fq[i].len()).map(|c| fq[i][c] - keys[j][c] + pos[0][c]).collect();
                mlp(&vec![h], store, &b.logit)[0][0]
            })
            .collect();
        let a = softmax(&logits);
        for (w, &j) in a.iter().zip(idx) {
            for c in 0..out[i].len() {
                out[i][c] += w * vals[j][c];
            }
        }
    }
    out
}

pub fn upsample(store: &ParamStore, b: &Grb, p: &Mat, f_ctx: &Mat) -> Mat {
    let disp = mlp(f_ctx, store, &b.disp);
    let mut out = Vec::with_capacity(p.len() * b.cfg.r);
    for (pi, di) in p.iter().zip(&disp) {
        for s in 0..b.cfg.r {
            out.push((0..3).map(|c| pi[c] + di[3 * s + c]).collect());
        }
    }
    out
}

/// Chain of refinement blocks from the scaffold; returns every level.
pub fn refine(
    store: &ParamStore,
    blocks: &[Grb],
    p_c: &Mat,
    obs_centers: &Mat,
    fo: &Mat,
    fg: &Mat,
    flags: GrbFlags,
) -> Vec<Mat> {
    let mut p = p_c.clone();
    let mut ctx: Option<(Mat, Mat)> = None;
    let mut levels = Vec::new();
    for b in blocks {
        let f_as = assoc(&p, obs_centers, fo, fg, b.cfg.k, flags.dual_source);
        let (cp, cf) = match ctx.take() {
            Some(c) => c,
            None => (p.clone(), mlp(&f_as, store, b.ctx_proj.as_ref().unwrap())),
        };
        let f_ctx = cssc(store, b, &p, &f_as, &cp, &cf, flags.structure_aware);
        let up = upsample(store, b, &p, &f_ctx);
        ctx = Some((p, f_ctx));
        levels.push(up.clone());
        p = up;
    }
    levels
}
