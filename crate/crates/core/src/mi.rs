//! Sampled vCLUB mutual-information upper bound and the six-pair penalty.

use std::f64::consts::PI;

use dvc_tensor::init::Initializer;
use dvc_tensor::layers::{Layer, Linear};
use dvc_tensor::{Graph, Group, ParamStore, Var};

use crate::config::MiWeights;
use crate::error::CoreError;
use crate::Result;

pub const LOGVAR_BOUND: f64 = 10.0;

/// Diagonal Gaussian `q(y | x)` with separate mean and log-variance networks.
#[derive(Clone, Debug)]
pub struct VariationalNet {
    mu_hidden: Linear,
    mu_out: Linear,
    lv_hidden: Linear,
    lv_out: Linear,
    pub x_dim: usize,
    pub y_dim: usize,
}

impl VariationalNet {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, name: &str, x_dim: usize, y_dim: usize, hidden: usize) -> Self {
        let g = Group::Estimator;
        Self {
            mu_hidden: Linear::new(ps, init, &format!("{name}.mu.0"), g, x_dim, hidden),
            mu_out: Linear::new(ps, init, &format!("{name}.mu.1"), g, hidden, y_dim),
            lv_hidden: Linear::new(ps, init, &format!("{name}.logvar.0"), g, x_dim, hidden),
            lv_out: Linear::new(ps, init, &format!("{name}.logvar.1"), g, hidden, y_dim),
            x_dim,
            y_dim,
        }
    }

    /// `(μ(x), ln σ²(x))`, each `[N, y_dim]`; the log-variance is clamped to ±10.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = self.mu_hidden.forward(g, ps, x)?;
        let h = g.relu(h);
        let mu = self.mu_out.forward(g, ps, h)?;
        let h = self.lv_hidden.forward(g, ps, x)?;
        let h = g.relu(h);
        let lv = self.lv_out.forward(g, ps, h)?;
        let lv = g.clamp(lv, -LOGVAR_BOUND, LOGVAR_BOUND);
        Ok((mu, lv))
    }
}

fn check_pairs(g: &Graph, x: Var, y: Var, net: &VariationalNet) -> Result<usize> {
    let (xs, ys) = (g.shape(x), g.shape(y));
    if xs.len() != 2 || ys.len() != 2 || xs[0] != ys[0] {
        return Err(CoreError::Data(format!("vCLUB needs paired [N, d] batches, got {xs:?} and {ys:?}")));
    }
    if xs[1] != net.x_dim || ys[1] != net.y_dim {
        return Err(CoreError::Data(format!(
            "vCLUB net maps {} -> {}, got {} -> {}",
            net.x_dim, net.y_dim, xs[1], ys[1]
        )));
    }
    if xs[0] < 2 {
        return Err(CoreError::Config(format!("vCLUB needs N >= 2 paired samples, got {}", xs[0])));
    }
    Ok(xs[0])
}

/// Mean log-density `(1/N) Σ_i log q(y_i | x_i)` in nats.
pub fn club_loglik(g: &mut Graph, ps: &ParamStore, net: &VariationalNet, x: Var, y: Var) -> Result<Var> {
    check_pairs(g, x, y, net)?;
    let (mu, lv) = net.forward(g, ps, x)?;
    let inv_var = {
        let neg = g.scale(lv, -1.0);
        g.exp(neg)
    };
    let err = g.sub(y, mu);
    let err2 = g.square(err);
    let maha = g.mul(err2, inv_var);
    let per = g.add(maha, lv);
    let per = g.sum_last(per);
    let mean = g.mean(per);
    let ll = g.scale(mean, -0.5);
    Ok(g.add_scalar(ll, -0.5 * net.y_dim as f64 * (2.0 * PI).ln()))
}

/// Sampled vCLUB estimate `(1/N) Σ_i [log q(y_i|x_i) − (1/N) Σ_j log q(y_j|x_i)]`.
///
/// The inner mean over `j` is evaluated exactly from the column moments of `y`:
/// `(1/N) Σ_j (y_j − μ_i)² = m₂ − 2 μ_i m₁ + μ_i²`. The log-variance and
/// normalizing terms cancel between the two parts.
pub fn club_mi_estimate(g: &mut Graph, ps: &ParamStore, net: &VariationalNet, x: Var, y: Var) -> Result<Var> {
    check_pairs(g, x, y, net)?;
    let (mu, lv) = net.forward(g, ps, x)?;
    let inv_var = {
        let neg = g.scale(lv, -1.0);
        g.exp(neg)
    };
    let err = g.sub(y, mu);
    let positive = g.square(err);

    let m1 = g.mean_rows(y);
    let y2 = g.square(y);
    let m2 = g.mean_rows(y2);
    let mu_m1 = g.mul_bias(mu, m1);
    let cross = g.scale(mu_m1, -2.0);
    let mu2 = g.square(mu);
    let marginal = g.add(cross, mu2);
    let marginal = g.add_bias(marginal, m2);

    // log q(y_i|x_i) − mean_j log q(y_j|x_i) = ½ Σ_d (marginal − positive) / σ²
    let gap = g.sub(marginal, positive);
    let gap = g.mul(gap, inv_var);
    let per = g.sum_last(gap);
    let mean = g.mean(per);
    Ok(g.scale(mean, 0.5))
}

/// The six representation pairs, in the order of [`MiWeights::as_array`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pair {
    StyleSpeaker,
    StyleContent,
    StylePitch,
    SpeakerContent,
    SpeakerPitch,
    ContentPitch,
}

impl Pair {
    pub const ALL: [Pair; 6] = [
        Pair::StyleSpeaker,
        Pair::StyleContent,
        Pair::StylePitch,
        Pair::SpeakerContent,
        Pair::SpeakerPitch,
        Pair::ContentPitch,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Pair::StyleSpeaker => "sp",
            Pair::StyleContent => "sc",
            Pair::StylePitch => "sf",
            Pair::SpeakerContent => "pc",
            Pair::SpeakerPitch => "pf",
            Pair::ContentPitch => "cf",
        }
    }

    /// `(conditioning, predicted)` representation of the pair.
    pub fn members(self) -> (Rep, Rep) {
        match self {
            Pair::StyleSpeaker => (Rep::Style, Rep::Speaker),
            Pair::StyleContent => (Rep::Style, Rep::Content),
            Pair::StylePitch => (Rep::Style, Rep::Pitch),
            Pair::SpeakerContent => (Rep::Speaker, Rep::Content),
            Pair::SpeakerPitch => (Rep::Speaker, Rep::Pitch),
            Pair::ContentPitch => (Rep::Content, Rep::Pitch),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rep {
    Style,
    Speaker,
    Content,
    Pitch,
}

/// Frame-aligned representations `[N, d]`, pooled over batch and time.
#[derive(Clone, Copy, Debug)]
pub struct FrameReps {
    pub style: Var,
    pub speaker: Var,
    pub content: Var,
    pub pitch: Var,
}

impl FrameReps {
    pub fn get(&self, r: Rep) -> Var {
        match r {
            Rep::Style => self.style,
            Rep::Speaker => self.speaker,
            Rep::Content => self.content,
            Rep::Pitch => self.pitch,
        }
    }
}

/// One variational network per pair.
#[derive(Clone, Debug)]
pub struct MiEstimators {
    pub nets: Vec<VariationalNet>,
}

impl MiEstimators {
    pub fn new(ps: &mut ParamStore, init: &mut Initializer, dims: impl Fn(Rep) -> usize, hidden: usize) -> Self {
        let nets = Pair::ALL
            .iter()
            .map(|p| {
                let (a, b) = p.members();
                VariationalNet::new(ps, init, &format!("mi.{}", p.tag()), dims(a), dims(b), hidden)
            })
            .collect();
        Self { nets }
    }

    pub fn net(&self, p: Pair) -> Result<&VariationalNet> {
        let i = Pair::ALL.iter().position(|q| *q == p).expect("listed pair");
        self.nets.get(i).ok_or_else(|| CoreError::Data(format!("no estimator for pair {}", p.tag())))
    }

    /// Sum of the six log-likelihoods: the auxiliary objective to maximize.
    pub fn total_loglik(&self, g: &mut Graph, ps: &ParamStore, reps: &FrameReps) -> Result<Var> {
        check_aligned(g, reps)?;
        let mut acc: Option<Var> = None;
        for p in Pair::ALL {
            let (a, b) = p.members();
            let ll = club_loglik(g, ps, self.net(p)?, reps.get(a), reps.get(b))?;
            acc = Some(match acc {
                Some(s) => g.add(s, ll),
                None => ll,
            });
        }
        Ok(acc.expect("six pairs"))
    }

    /// Per-pair estimates in pair order.
    pub fn estimates(&self, g: &mut Graph, ps: &ParamStore, reps: &FrameReps) -> Result<[Var; 6]> {
        check_aligned(g, reps)?;
        let mut out = Vec::with_capacity(6);
        for p in Pair::ALL {
            let (a, b) = p.members();
            out.push(club_mi_estimate(g, ps, self.net(p)?, reps.get(a), reps.get(b))?);
        }
        Ok(out.try_into().expect("six pairs"))
    }
}

fn check_aligned(g: &Graph, reps: &FrameReps) -> Result<()> {
    let n = g.shape(reps.style)[0];
    for r in [reps.speaker, reps.content, reps.pitch] {
        if g.shape(r).first() != Some(&n) {
            return Err(CoreError::Data(format!(
                "representations are not frame-aligned: {n} vs {:?}",
                g.shape(r)
            )));
        }
    }
    Ok(())
}

/// `Σ_k w_k · max(0, Î_k)`; the clamp keeps finite-sample negative estimates
/// from being rewarded. Returns `None` when every weight is zero.
pub fn mi_loss(g: &mut Graph, estimates: &[Var; 6], w: &MiWeights, clamp: bool) -> Option<Var> {
    let mut acc: Option<Var> = None;
    for (&e, &wk) in estimates.iter().zip(w.as_array().iter()) {
        if wk == 0.0 {
            continue;
        }
        let e = if clamp { g.relu(e) } else { e };
        let term = g.scale(e, wk);
        acc = Some(match acc {
            Some(s) => g.add(s, term),
            None => term,
        });
    }
    acc
}
