//! Line-oriented text format for trained models.
//!
//! ```text
//! latentnet-model 1
//! scale <min> <max> <step> <target_low> <target_high>
//! topology <latent> <attributes> <outputs> <hidden_activation> <output_activation> <hidden sizes...>
//! items <m>
//! latent <v_0 ... v_t-1>          (m lines, omitted when t = 0)
//! profile <a_0 ... a_a-1>         (m lines, omitted when a = 0)
//! layer <fan_in> <fan_out>
//! unit <bias> <w_0 ... w_fan_in-1> (fan_out lines per layer)
//! end
//! ```
//!
//! Reals use Rust's shortest round-trip exponent notation, so reading a file
//! and writing it again reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::{ItemProfiles, RatingScale};
use crate::error::{Error, Result};
use crate::network::{Activation, Layer, Network, Topology, WeightSet};
use crate::trainer::{LatentMatrix, TrainedModel};

const MAGIC: &str = "latentnet-model";
const VERSION: u32 = 1;

fn push_reals(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        write!(out, " {v:e}").unwrap();
    }
    out.push('\n');
}

impl TrainedModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = self.scale();
        let t = self.network().topology();
        writeln!(out, "{MAGIC} {VERSION}").unwrap();
        push_reals(&mut out, "scale", &[s.min, s.max, s.step, s.target_low, s.target_high]);
        write!(
            out,
            "topology {} {} {} {} {}",
            t.latent,
            t.attributes,
            t.outputs,
            t.hidden_activation.name(),
            t.output_activation.name()
        )
        .unwrap();
        for h in &t.hidden {
            write!(out, " {h}").unwrap();
        }
        out.push('\n');
        let m = self.num_items();
        writeln!(out, "items {m}").unwrap();
        if t.latent > 0 {
            for r in 0..m {
                push_reals(&mut out, "latent", self.latents().row(r));
            }
        }
        if t.attributes > 0 {
            for r in 0..m {
                push_reals(&mut out, "profile", self.profiles().row(r));
            }
        }
        for layer in self.network().weights().layers() {
            writeln!(out, "layer {} {}", layer.inputs(), layer.outputs()).unwrap();
            let mut row = Vec::with_capacity(layer.inputs() + 1);
            for j in 0..layer.outputs() {
                row.clear();
                row.push(layer.bias(j));
                row.extend_from_slice(layer.incoming(j));
                push_reals(&mut out, "unit", &row);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(self.to_text().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Lines {
            inner: reader.lines(),
            number: 0,
        };

        let header = lines.expect("header")?;
        if header != [MAGIC, &VERSION.to_string()] {
            return Err(lines.error(format!("expected `{MAGIC} {VERSION}`")));
        }

        let fields = lines.tagged("scale")?;
        let s = lines.reals(&fields, 5)?;
        let scale = RatingScale::with_targets(s[0], s[1], s[2], s[3], s[4]).map_err(|e| lines.error(e.to_string()))?;

        let fields = lines.tagged("topology")?;
        if fields.len() < 5 {
            return Err(lines.error("topology needs at least 5 fields"));
        }
        let latent = lines.count(&fields[0])?;
        let attributes = lines.count(&fields[1])?;
        let outputs = lines.count(&fields[2])?;
        let activation =
            |name: &str| Activation::from_name(name).ok_or_else(|| lines.error(format!("unknown activation `{name}`")));
        let hidden_activation = activation(&fields[3])?;
        let output_activation = activation(&fields[4])?;
        let hidden = fields[5..].iter().map(|f| lines.count(f)).collect::<Result<Vec<_>>>()?;
        let topology = Topology {
            latent,
            attributes,
            hidden,
            outputs,
            hidden_activation,
            output_activation,
        };
        topology.validate().map_err(|e| lines.error(e.to_string()))?;

        let fields = lines.tagged("items")?;
        if fields.len() != 1 {
            return Err(lines.error("items takes one count"));
        }
        let m = lines.count(&fields[0])?;

        let mut latent_values = Vec::with_capacity(m * latent);
        if latent > 0 {
            for _ in 0..m {
                let fields = lines.tagged("latent")?;
                latent_values.extend(lines.reals(&fields, latent)?);
            }
        }
        let mut profile_values = Vec::with_capacity(m * attributes);
        if attributes > 0 {
            for _ in 0..m {
                let fields = lines.tagged("profile")?;
                profile_values.extend(lines.reals(&fields, attributes)?);
            }
        }

        let mut layers = Vec::new();
        for (fan_in, fan_out) in topology.layer_shapes() {
            let fields = lines.tagged("layer")?;
            if fields.len() != 2 || lines.count(&fields[0])? != fan_in || lines.count(&fields[1])? != fan_out {
                return Err(lines.error(format!("expected `layer {fan_in} {fan_out}`")));
            }
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            let mut biases = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                let fields = lines.tagged("unit")?;
                let row = lines.reals(&fields, fan_in + 1)?;
                biases.push(row[0]);
                weights.extend_from_slice(&row[1..]);
            }
            layers.push(Layer::from_parts(fan_in, fan_out, weights, biases)?);
        }
        if lines.expect("end")? != ["end"] {
            return Err(lines.error("expected `end`"));
        }

        let weights = WeightSet::from_layers(&topology, layers)?;
        let network = Network::new(topology, weights)?;
        let latents = LatentMatrix::from_values(m, latent, latent_values)?;
        let profiles = ItemProfiles::new(m, attributes, profile_values)?;
        TrainedModel::from_parts(network, latents, profiles, scale)
    }
}

struct Lines<I> {
    inner: I,
    number: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Lines<I> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line: self.number,
            message: message.into(),
        }
    }

    fn expect(&mut self, what: &str) -> Result<Vec<String>> {
        self.number += 1;
        match self.inner.next() {
            Some(Ok(line)) => Ok(line.split(' ').map(str::to_string).collect()),
            Some(Err(e)) => Err(self.error(e.to_string())),
            None => Err(self.error(format!("unexpected end of file, wanted {what}"))),
        }
    }

    fn tagged(&mut self, tag: &str) -> Result<Vec<String>> {
        let mut fields = self.expect(tag)?;
        if fields.first().map(String::as_str) != Some(tag) {
            return Err(self.error(format!("expected `{tag}` line")));
        }
        fields.remove(0);
        Ok(fields)
    }

    fn count(&self, field: &str) -> Result<usize> {
        field.parse().map_err(|_| self.error(format!("bad count `{field}`")))
    }

    fn reals(&self, fields: &[String], expected: usize) -> Result<Vec<f64>> {
        if fields.len() != expected {
            return Err(self.error(format!("expected {expected} values, found {}", fields.len())));
        }
        fields
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(self.error(format!("bad value `{f}`"))),
            })
            .collect()
    }
}
