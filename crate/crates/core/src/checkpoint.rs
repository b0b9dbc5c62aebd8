//! Binary checkpoint container and conversions for every trained artifact.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OSDL" | u16 schema | u8 role | str task | str arch
//! u16 n_meta  { str key | str value }
//! u32 n_tensors { str name | u8 rank | u32 dim * rank | f32 * numel }
//! ```
//!
//! where `str` is a `u16` byte length followed by UTF-8. Values are stored in
//! 32-bit; loading widens them exactly, so save → load → save is byte-stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::diffusion::{make_schedule, Denoiser, DenoiserSpec, NoiseSchedule, ScheduleKind};
use crate::distill::Student;
use crate::error::{Error, Result};
use crate::lora::{LoraAdapterSet, ADAPTER_PREFIX};
use crate::netcore::{Architecture, Mlp};
use crate::tensor::{ParamSet, Tensor};
use crate::toy::{Autoencoder, Coder, JointEmbedder, ToyTask};

pub const MAGIC: &[u8; 4] = b"OSDL";
pub const SCHEMA_VERSION: u16 = 1;

const IDENTITY: &str = "identity";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    StudentFull,
    StudentLora,
    Embedder,
    Decoder,
    TinyDecoder,
    Merged,
}

impl Role {
    const ALL: [Role; 7] = [
        Role::Teacher,
        Role::StudentFull,
        Role::StudentLora,
        Role::Embedder,
        Role::Decoder,
        Role::TinyDecoder,
        Role::Merged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Teacher => "teacher",
            Self::StudentFull => "student_full",
            Self::StudentLora => "student_lora",
            Self::Embedder => "embedder",
            Self::Decoder => "decoder",
            Self::TinyDecoder => "tiny_decoder",
            Self::Merged => "merged",
        }
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|&r| r == self).expect("listed") as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .get(usize::from(c))
            .copied()
            .ok_or_else(|| format_err(format!("unknown role code {c}")))
    }

    pub fn is_student(self) -> bool {
        matches!(self, Self::StudentFull | Self::StudentLora | Self::Merged)
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    pub task: String,
    pub arch: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: ParamSet,
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| format_err(format!("string too long: {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = usize::from(self.u16()?);
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn new(role: Role, task: &str, arch: &str) -> Self {
        Self {
            role,
            task: task.to_string(),
            arch: arch.to_string(),
            meta: BTreeMap::new(),
            tensors: ParamSet::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| format_err(format!("missing metadata `{key}`")))
    }

    pub fn meta_parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta_str(key)?;
        v.parse()
            .map_err(|_| format_err(format!("metadata `{key}` has unparsable value `{v}`")))
    }

    pub fn expect_role(&self, roles: &[Role]) -> Result<()> {
        if roles.contains(&self.role) {
            Ok(())
        } else {
            let want: Vec<&str> = roles.iter().map(|r| r.name()).collect();
            Err(format_err(format!(
                "checkpoint role is `{}`, expected one of {want:?}",
                self.role.name()
            )))
        }
    }

    pub fn task(&self) -> Result<ToyTask> {
        ToyTask::parse(&self.task)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        out.push(self.role.code());
        put_str(&mut out, &self.task)?;
        put_str(&mut out, &self.arch)?;
        let n_meta = u16::try_from(self.meta.len()).map_err(|_| format_err("too many metadata entries"))?;
        out.extend_from_slice(&n_meta.to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        let n_t = u32::try_from(self.tensors.len()).map_err(|_| format_err("too many tensors"))?;
        out.extend_from_slice(&n_t.to_le_bytes());
        for (name, t) in self.tensors.iter() {
            put_str(&mut out, name)?;
            let rank = u8::try_from(t.shape().len()).map_err(|_| format_err(format!("rank of `{name}` too large")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| format_err(format!("dimension of `{name}` too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite { name: name.to_string() });
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err("bad magic bytes"));
        }
        let schema = r.u16()?;
        if schema != SCHEMA_VERSION {
            return Err(format_err(format!(
                "unsupported schema version {schema} (this build reads {SCHEMA_VERSION})"
            )));
        }
        let role = Role::from_code(r.u8()?)?;
        let task = r.str()?;
        let arch = r.str()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u16()? {
            let k = r.str()?;
            let v = r.str()?;
            if meta.insert(k.clone(), v).is_some() {
                return Err(format_err(format!("duplicate metadata key `{k}`")));
            }
        }
        let mut tensors = ParamSet::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = usize::from(r.u8()?);
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format_err(format!("shape of `{name}` overflows")))?;
            let bytes = r.take(numel.checked_mul(4).ok_or_else(|| format_err("tensor too large"))?)?;
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != buf.len() {
            return Err(format_err(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            role,
            task,
            arch,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn teacher_checkpoint(task: ToyTask, teacher: &Denoiser, schedule: &NoiseSchedule) -> Checkpoint {
    let mut c = Checkpoint::new(Role::Teacher, task.name(), &teacher.spec.arch.descriptor())
        .with_meta("cond_dim", teacher.spec.cond_dim)
        .with_meta("t_max", teacher.spec.t_max)
        .with_meta("schedule", schedule.kind().name());
    c.tensors = teacher.params.clone();
    c
}

pub fn load_teacher(c: &Checkpoint) -> Result<(Denoiser, NoiseSchedule)> {
    c.expect_role(&[Role::Teacher])?;
    let t_max: usize = c.meta_parse("t_max")?;
    let spec = DenoiserSpec::from_arch(Architecture::parse_descriptor(&c.arch)?, c.meta_parse("cond_dim")?, t_max)?;
    let schedule = make_schedule(t_max, ScheduleKind::parse(c.meta_str("schedule")?)?)?;
    Ok((Denoiser::from_params(spec, c.tensors.clone())?, schedule))
}

/// Plain students become `student_full` (or `role` if given); students with
/// adapters store base weights plus prefixed adapter tensors.
pub fn student_checkpoint(task: ToyTask, student: &Student, role: Option<Role>) -> Result<Checkpoint> {
    let role = role.unwrap_or(if student.has_adapters() {
        Role::StudentLora
    } else {
        Role::StudentFull
    });
    let mut c = Checkpoint::new(role, task.name(), &student.arch.descriptor()).with_meta("cond_dim", student.cond_dim);
    c.tensors = student.params.clone();
    match (&student.adapters, role) {
        (Some(a), Role::StudentLora) => {
            c = c.with_meta("lora_rank", a.rank()).with_meta("lora_gamma", a.gamma());
            c.tensors.extend_prefixed(ADAPTER_PREFIX, a.params())?;
        }
        (None, Role::StudentFull | Role::Merged) => {}
        _ => {
            return Err(crate::error::invalid(format!(
                "role `{}` does not match the student's adapter state",
                role.name()
            )))
        }
    }
    Ok(c)
}

/// A plain student holding `effective_params()` of `student`.
pub fn merged_checkpoint(task: ToyTask, student: &Student) -> Result<Checkpoint> {
    let plain = Student::from_params(student.arch.clone(), student.cond_dim, student.effective_params()?)?;
    student_checkpoint(task, &plain, Some(Role::Merged))
}

pub fn load_student(c: &Checkpoint) -> Result<Student> {
    c.expect_role(&[Role::StudentFull, Role::StudentLora, Role::Merged])?;
    let arch = Architecture::parse_descriptor(&c.arch)?;
    let cond_dim: usize = c.meta_parse("cond_dim")?;
    let adapters = c.tensors.strip_prefix(ADAPTER_PREFIX);
    let mut base = ParamSet::new();
    for (n, t) in c.tensors.iter().filter(|(n, _)| !n.starts_with(ADAPTER_PREFIX)) {
        base.insert(n, t.clone())?;
    }
    let mut s = Student::from_params(arch, cond_dim, base)?;
    if c.role == Role::StudentLora {
        s.adapters = Some(LoraAdapterSet::from_params(
            &s.arch,
            c.meta_parse("lora_rank")?,
            c.meta_parse("lora_gamma")?,
            adapters,
        )?);
    } else if !adapters.is_empty() {
        return Err(format_err(format!("`{}` checkpoint carries adapter tensors", c.role.name())));
    }
    Ok(s)
}

pub fn embedder_checkpoint(task: ToyTask, e: &JointEmbedder) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(Role::Embedder, task.name(), "joint")
        .with_meta("image_arch", e.image.arch.descriptor())
        .with_meta("text_arch", e.text.arch.descriptor());
    c.tensors.extend_prefixed("image.", &e.image.params)?;
    c.tensors.extend_prefixed("text.", &e.text.params)?;
    Ok(c)
}

pub fn load_embedder(c: &Checkpoint) -> Result<JointEmbedder> {
    c.expect_role(&[Role::Embedder])?;
    let net = |key: &str, prefix: &str| -> Result<Mlp> {
        Mlp::from_params(Architecture::parse_descriptor(c.meta_str(key)?)?, c.tensors.strip_prefix(prefix))
    };
    JointEmbedder::new(net("image_arch", "image.")?, net("text_arch", "text.")?)
}

fn coder_descriptor(coder: &Coder) -> String {
    coder
        .net()
        .map_or_else(|| IDENTITY.to_string(), |m| m.arch.descriptor())
}

fn put_coder(c: &mut Checkpoint, prefix: &str, coder: &Coder) -> Result<()> {
    if let Coder::Net(m) = coder {
        c.tensors.extend_prefixed(prefix, &m.params)?;
    }
    Ok(())
}

fn get_coder(c: &Checkpoint, descriptor: &str, prefix: &str) -> Result<Coder> {
    if descriptor == IDENTITY {
        return Ok(Coder::Identity);
    }
    Ok(Coder::Net(Mlp::from_params(
        Architecture::parse_descriptor(descriptor)?,
        c.tensors.strip_prefix(prefix),
    )?))
}

/// The full autoencoder under role `decoder`.
pub fn autoencoder_checkpoint(task: ToyTask, ae: &Autoencoder) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(Role::Decoder, task.name(), &coder_descriptor(&ae.decoder))
        .with_meta("encoder_arch", coder_descriptor(&ae.encoder));
    put_coder(&mut c, "encoder.", &ae.encoder)?;
    put_coder(&mut c, "decoder.", &ae.decoder)?;
    Ok(c)
}

pub fn load_autoencoder(c: &Checkpoint) -> Result<Autoencoder> {
    c.expect_role(&[Role::Decoder])?;
    Ok(Autoencoder {
        encoder: get_coder(c, c.meta_str("encoder_arch")?, "encoder.")?,
        decoder: get_coder(c, &c.arch, "decoder.")?,
    })
}

pub fn tiny_decoder_checkpoint(task: ToyTask, tiny: &Coder) -> Result<Checkpoint> {
    let mut c = Checkpoint::new(Role::TinyDecoder, task.name(), &coder_descriptor(tiny));
    put_coder(&mut c, "decoder.", tiny)?;
    Ok(c)
}

pub fn load_tiny_decoder(c: &Checkpoint) -> Result<Coder> {
    c.expect_role(&[Role::TinyDecoder])?;
    get_coder(c, &c.arch, "decoder.")
}
