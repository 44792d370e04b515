//! Model files and trace export.
//!
//! Every float in a model file is written as a decimal string with 17
//! significant digits, so text → value → text is the identity and values
//! survive the round trip bit for bit.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::maea3::IterationTrace;
use crate::spaces::{build_fusion_space, build_knowledge_space, DomainBox, FeatureDescriptor, FusionSpace, Host, KnowledgeSpace, Point, RkhsFunction, SelectionConfig, SpaceTag};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("not a number: '{s}'")))
}

fn fmt_vec(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| fmt_f64(x)).collect()
}

fn parse_vec(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| parse_f64(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureDoc {
    Monomial { degree: u32, axis: usize },
    Gaussian { center: Vec<String>, width: String },
    Sinusoid { frequency: String, phase: String, axis: usize },
}

impl FeatureDoc {
    fn from_feature(f: &FeatureDescriptor) -> Self {
        match f {
            FeatureDescriptor::Monomial { degree, axis } => FeatureDoc::Monomial { degree: *degree, axis: *axis },
            FeatureDescriptor::Gaussian { center, width } => FeatureDoc::Gaussian { center: fmt_vec(center), width: fmt_f64(*width) },
            FeatureDescriptor::Sinusoid { frequency, phase, axis } => {
                FeatureDoc::Sinusoid { frequency: fmt_f64(*frequency), phase: fmt_f64(*phase), axis: *axis }
            }
        }
    }

    fn to_feature(&self) -> Result<FeatureDescriptor> {
        Ok(match self {
            FeatureDoc::Monomial { degree, axis } => FeatureDescriptor::Monomial { degree: *degree, axis: *axis },
            FeatureDoc::Gaussian { center, width } => FeatureDescriptor::Gaussian { center: parse_vec(center)?, width: parse_f64(width)? },
            FeatureDoc::Sinusoid { frequency, phase, axis } => {
                FeatureDescriptor::Sinusoid { frequency: parse_f64(frequency)?, phase: parse_f64(phase)?, axis: *axis }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDoc {
    pub agent_id: usize,
    pub features: Vec<FeatureDoc>,
    pub lower: Vec<String>,
    pub upper: Vec<String>,
    pub basis_points: Vec<Vec<String>>,
    pub jitter: String,
    pub kernel_scale: String,
}

impl SpaceDoc {
    pub fn from_space(s: &KnowledgeSpace) -> Self {
        SpaceDoc {
            agent_id: s.agent_id,
            features: s.features.iter().map(FeatureDoc::from_feature).collect(),
            lower: fmt_vec(&s.domain.lower),
            upper: fmt_vec(&s.domain.upper),
            basis_points: s.basis_points.iter().map(|p| fmt_vec(p)).collect(),
            jitter: fmt_f64(s.jitter),
            kernel_scale: fmt_f64(s.kernel_scale),
        }
    }

    fn parts(&self) -> Result<(Vec<FeatureDescriptor>, DomainBox, Vec<Point>, f64)> {
        let features = self.features.iter().map(FeatureDoc::to_feature).collect::<Result<Vec<_>>>()?;
        let domain = DomainBox::new(parse_vec(&self.lower)?, parse_vec(&self.upper)?)?;
        let basis = self.basis_points.iter().map(|p| parse_vec(p)).collect::<Result<Vec<_>>>()?;
        Ok((features, domain, basis, parse_f64(&self.kernel_scale)?))
    }

    /// Rebuilds the space; the recomputed jitter must match the stored one.
    pub fn to_space(&self) -> Result<KnowledgeSpace> {
        let (features, domain, basis, scale) = self.parts()?;
        let s = build_knowledge_space(self.agent_id, features, domain, Some(basis))?.with_kernel_scale(scale)?;
        check_same("jitter", parse_f64(&self.jitter)?, s.jitter)?;
        Ok(s)
    }
}

fn check_same(what: &str, stored: f64, rebuilt: f64) -> Result<()> {
    if stored.to_bits() == rebuilt.to_bits() {
        Ok(())
    } else {
        Err(Error::Format(format!("{what} in file ({stored:e}) does not match the rebuilt space ({rebuilt:e})")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionDoc {
    pub space1: SpaceDoc,
    pub space2: SpaceDoc,
    pub normalize: bool,
    pub cond_cap: String,
    pub kernel_scale: String,
}

impl FusionDoc {
    pub fn from_fusion(f: &FusionSpace) -> Self {
        let normalize = f.kernel_scale != 1.0 || f.space1.kernel_scale != 1.0;
        FusionDoc {
            space1: SpaceDoc::from_space(&f.space1),
            space2: SpaceDoc::from_space(&f.space2),
            normalize,
            cond_cap: fmt_f64(f.cond_cap),
            kernel_scale: fmt_f64(f.kernel_scale),
        }
    }

    pub fn to_fusion(&self) -> Result<FusionSpace> {
        let (f1, d1, b1, _) = self.space1.parts()?;
        let (f2, d2, b2, _) = self.space2.parts()?;
        let s1 = build_knowledge_space(1, f1, d1, Some(b1.clone()))?;
        let s2 = build_knowledge_space(2, f2, d2, Some(b2.clone()))?;
        let cfg = SelectionConfig { normalize: self.normalize, cond_cap: parse_f64(&self.cond_cap)?, basis: Some((b1, b2)), ..Default::default() };
        let fs = build_fusion_space(&s1, &s2, &cfg)?;
        check_same("kernel_scale", parse_f64(&self.kernel_scale)?, fs.kernel_scale)?;
        check_same("jitter (agent 1)", parse_f64(&self.space1.jitter)?, fs.space1.jitter)?;
        check_same("jitter (agent 2)", parse_f64(&self.space2.jitter)?, fs.space2.jitter)?;
        Ok(fs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDoc {
    /// "agent1", "agent2" or "fusion".
    pub space: String,
    pub coefficients: Vec<String>,
}

impl FunctionDoc {
    fn from_function(f: &RkhsFunction) -> Self {
        FunctionDoc { space: f.tag.to_string(), coefficients: fmt_vec(f.coefficients.as_slice()) }
    }

    fn to_function(&self) -> Result<RkhsFunction> {
        let tag = match self.space.as_str() {
            "agent1" => SpaceTag::Agent(1),
            "agent2" => SpaceTag::Agent(2),
            "fusion" => SpaceTag::Fusion,
            other => return Err(Error::Format(format!("unknown space tag '{other}'"))),
        };
        RkhsFunction::new(tag, DVector::from_vec(parse_vec(&self.coefficients)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<SpaceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionDoc>,
    pub function: FunctionDoc,
}

#[derive(Debug, Clone)]
pub enum LoadedModel {
    Agent { space: KnowledgeSpace, function: RkhsFunction },
    Fusion { fusion: Box<FusionSpace>, function: RkhsFunction },
}

impl ModelFile {
    pub fn agent(space: &KnowledgeSpace, f: &RkhsFunction) -> Result<Self> {
        space.accepts(f)?;
        Ok(ModelFile { format: FORMAT_VERSION, label: None, agent: Some(SpaceDoc::from_space(space)), fusion: None, function: FunctionDoc::from_function(f) })
    }

    pub fn fused(fusion: &FusionSpace, f: &RkhsFunction) -> Result<Self> {
        fusion.accepts(f)?;
        Ok(ModelFile { format: FORMAT_VERSION, label: None, agent: None, fusion: Some(FusionDoc::from_fusion(fusion)), function: FunctionDoc::from_function(f) })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: ModelFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format {}", doc.format)));
        }
        if doc.agent.is_some() == doc.fusion.is_some() {
            return Err(Error::Format("a model file holds exactly one of [agent] or [fusion]".into()));
        }
        Ok(doc)
    }

    pub fn load(&self) -> Result<LoadedModel> {
        let function = self.function.to_function()?;
        match (&self.agent, &self.fusion) {
            (Some(a), None) => {
                let space = a.to_space()?;
                space.accepts(&function)?;
                Ok(LoadedModel::Agent { space, function })
            }
            (None, Some(f)) => {
                let fusion = f.to_fusion()?;
                fusion.accepts(&function)?;
                Ok(LoadedModel::Fusion { fusion: Box::new(fusion), function })
            }
            _ => Err(Error::Format("a model file holds exactly one of [agent] or [fusion]".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub const TRACE_HEADER: [&str; 13] =
    ["n", "rho1", "rho2", "rho", "norm_f1", "norm_f2", "norm_fused", "norm_down1", "norm_down2", "psi1", "psi2", "bound_rhs", "stop_metric"];

/// One row per iteration; absent values are empty fields.
pub fn write_trace_csv(path: &Path, trace: &IterationTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.rho[0]),
            fmt_f64(r.rho[1]),
            fmt_f64(r.rho[2]),
            fmt_f64(r.norm_local[0]),
            fmt_f64(r.norm_local[1]),
            fmt_f64(r.norm_fused),
            fmt_f64(r.norm_down[0]),
            fmt_f64(r.norm_down[1]),
            fmt_f64(r.psi[0]),
            fmt_f64(r.psi[1]),
            opt(r.bound_rhs),
            opt(r.stop_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}
