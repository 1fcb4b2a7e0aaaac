use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Arc;

use super::{Artifact, BackendError, CapabilitySet, Generator};
use crate::builder::ModelGraph;
use crate::registry::LayerConfig;
use crate::runtime::ParamStore;

/// Emits the body of `static void layer_<i>(const float* x, float* y)`.
/// Parameter tensors are visible as `L<i>_<name>`.
pub type LayerTemplate = dyn Fn(usize, &LayerConfig) -> String + Send + Sync;

/// Portable C99 backend: static weight arrays, static activation buffers and
/// one `infer(const float* in, float* out)` entry point.
#[derive(Clone)]
pub struct CGenerator {
    templates: BTreeMap<String, Arc<LayerTemplate>>,
}

impl Default for CGenerator {
    fn default() -> Self {
        let mut templates: BTreeMap<String, Arc<LayerTemplate>> = BTreeMap::new();
        templates.insert("identity".into(), Arc::new(copy));
        templates.insert("flatten".into(), Arc::new(copy));
        templates.insert("relu".into(), Arc::new(relu));
        templates.insert("linear".into(), Arc::new(linear));
        templates.insert("conv1d".into(), Arc::new(conv1d));
        templates.insert("maxpool".into(), Arc::new(maxpool));
        Self { templates }
    }
}

impl CGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the implementation of `op`.
    pub fn with_template(mut self, op: &str, template: Arc<LayerTemplate>) -> Self {
        self.templates.insert(op.into(), template);
        self
    }

    /// Drops `op`, shrinking the reflected capabilities.
    pub fn without(mut self, op: &str) -> Self {
        self.templates.remove(op);
        self
    }
}

impl Generator for CGenerator {
    fn name(&self) -> &str {
        "c"
    }

    fn reflect(&self) -> CapabilitySet {
        CapabilitySet::new(self.templates.keys().cloned()).expect("generator has templates")
    }

    fn generate(&self, graph: &ModelGraph, params: &ParamStore) -> Result<Artifact, BackendError> {
        self.check_graph(graph)?;
        let in_size = graph.input.numel();
        let out_size = graph.output.numel();
        let header = format!(
            "#ifndef NASFORGE_MODEL_H\n#define NASFORGE_MODEL_H\n\n\
             #define MODEL_INPUT_SIZE {in_size}\n#define MODEL_OUTPUT_SIZE {out_size}\n\n\
             void infer(const float* in, float* out);\n\n#endif\n"
        );

        let mut weights = String::from("/* generated parameter tensors */\n#include \"model.h\"\n");
        let mut externs = String::new();
        for (i, layer) in graph.layers.iter().enumerate() {
            for decl in &layer.tensors {
                let t = params.get(i, &decl.name).ok_or_else(|| {
                    BackendError::Format(format!("layer {i}: no values for tensor `{}`", decl.name))
                })?;
                if t.numel() != decl.numel() {
                    return Err(BackendError::Format(format!(
                        "layer {i}: tensor `{}` has {} values, expected {}",
                        decl.name,
                        t.numel(),
                        decl.numel()
                    )));
                }
                let sym = format!("L{i}_{}", decl.name);
                writeln!(externs, "extern const float {sym}[{}];", t.numel()).unwrap();
                writeln!(weights, "\nextern const float {sym}[{}];", t.numel()).unwrap();
                write!(weights, "const float {sym}[{}] = {{", t.numel()).unwrap();
                for (k, v) in t.data.iter().enumerate() {
                    if k % 8 == 0 {
                        weights.push_str("\n   ");
                    }
                    write!(weights, " {v:?}f,").unwrap();
                }
                weights.push_str("\n};\n");
            }
        }

        let mut model = String::from("#include \"model.h\"\n\n");
        model.push_str(&externs);
        let n = graph.layers.len();
        let scratch = graph
            .layers
            .iter()
            .take(n.saturating_sub(1))
            .map(|l| l.output.numel())
            .max();
        if let Some(size) = scratch {
            writeln!(model, "\nstatic float buf_a[{size}];").unwrap();
            if n > 2 {
                writeln!(model, "static float buf_b[{size}];").unwrap();
            }
        }
        for (i, layer) in graph.layers.iter().enumerate() {
            let body = (self.templates[&layer.op])(i, layer);
            write!(
                model,
                "\n/* {} {} -> {} */\n",
                layer.op, layer.input, layer.output
            )
            .unwrap();
            write!(
                model,
                "static void layer_{i}(const float* x, float* y)\n{{\n{body}}}\n"
            )
            .unwrap();
        }
        model.push_str("\nvoid infer(const float* in, float* out)\n{\n");
        if n == 0 {
            model.push_str(
                "    int i;\n    for (i = 0; i < MODEL_INPUT_SIZE; ++i) out[i] = in[i];\n",
            );
        }
        for i in 0..n {
            let src = match i {
                0 => "in",
                _ if i % 2 == 1 => "buf_a",
                _ => "buf_b",
            };
            let dst = match i {
                _ if i + 1 == n => "out",
                _ if i % 2 == 0 => "buf_a",
                _ => "buf_b",
            };
            writeln!(model, "    layer_{i}({src}, {dst});").unwrap();
        }
        model.push_str("}\n");

        Ok(Artifact {
            files: vec![
                ("model.h".into(), header),
                ("model.c".into(), model),
                ("weights.c".into(), weights),
                ("bench_main.c".into(), BENCH_MAIN.into()),
            ],
        })
    }
}

const BENCH_MAIN: &str = r#"#include <stdio.h>
#include <string.h>
#include <time.h>

#include "model.h"

static float input[MODEL_INPUT_SIZE];
static float output[MODEL_OUTPUT_SIZE];

/* `--eval` reads MODEL_INPUT_SIZE floats from stdin and prints the outputs;
   without arguments it times repeated inferences. */
int main(int argc, char** argv)
{
    int i;
    if (argc > 1 && strcmp(argv[1], "--eval") == 0) {
        for (i = 0; i < MODEL_INPUT_SIZE; ++i) {
            if (scanf("%f", &input[i]) != 1) {
                fprintf(stderr, "expected %d input values\n", MODEL_INPUT_SIZE);
                return 1;
            }
        }
        infer(input, output);
        for (i = 0; i < MODEL_OUTPUT_SIZE; ++i) {
            printf("%.9g\n", (double)output[i]);
        }
        return 0;
    }
    {
        const int runs = 100;
        clock_t start;
        double seconds;
        for (i = 0; i < MODEL_INPUT_SIZE; ++i) {
            input[i] = (float)(i % 17) / 17.0f - 0.5f;
        }
        start = clock();
        for (i = 0; i < runs; ++i) {
            infer(input, output);
        }
        seconds = (double)(clock() - start) / CLOCKS_PER_SEC / runs;
        printf("latency_s %.9g output0 %.9g\n", seconds, (double)output[0]);
    }
    return 0;
}
"#;

fn int(layer: &LayerConfig, name: &str) -> i64 {
    layer.params.int(name).unwrap_or(0)
}

fn copy(_: usize, layer: &LayerConfig) -> String {
    format!(
        "    int i;\n    for (i = 0; i < {}; ++i) y[i] = x[i];\n",
        layer.output.numel()
    )
}

fn relu(_: usize, layer: &LayerConfig) -> String {
    format!(
        "    int i;\n    for (i = 0; i < {}; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;\n",
        layer.output.numel()
    )
}

fn linear(i: usize, layer: &LayerConfig) -> String {
    let (inp, out) = (layer.input.numel(), layer.output.numel());
    format!(
        "    int o, j;
    for (o = 0; o < {out}; ++o) {{
        const float* w = &L{i}_weight[o * {inp}];
        float acc = L{i}_bias[o];
        for (j = 0; j < {inp}; ++j) acc += w[j] * x[j];
        y[o] = acc;
    }}
"
    )
}

fn conv1d(i: usize, layer: &LayerConfig) -> String {
    let (ic, len) = layer
        .input
        .channels_length()
        .unwrap_or((1, layer.input.numel()));
    let (oc, out_len) = layer
        .output
        .channels_length()
        .unwrap_or((1, layer.output.numel()));
    let k = int(layer, "kernel_size");
    let stride = int(layer, "stride").max(1);
    let pad = int(layer, "padding");
    let tap = if pad == 0 {
        format!("acc += w[c * {k} + j] * x[c * {len} + t * {stride} + j];")
    } else {
        format!(
            "{{ int p = t * {stride} + j - {pad}; if (p >= 0 && p < {len}) acc += w[c * {k} + j] * x[c * {len} + p]; }}"
        )
    };
    format!(
        "    int o, t, c, j;
    for (o = 0; o < {oc}; ++o) {{
        const float* w = &L{i}_weight[o * {ic} * {k}];
        for (t = 0; t < {out_len}; ++t) {{
            float acc = L{i}_bias[o];
            for (c = 0; c < {ic}; ++c) {{
                for (j = 0; j < {k}; ++j) {tap}
            }}
            y[o * {out_len} + t] = acc;
        }}
    }}
"
    )
}

fn maxpool(_: usize, layer: &LayerConfig) -> String {
    let (c, len) = layer
        .input
        .channels_length()
        .unwrap_or((1, layer.input.numel()));
    let (_, out_len) = layer
        .output
        .channels_length()
        .unwrap_or((1, layer.output.numel()));
    let k = int(layer, "kernel_size");
    let s = int(layer, "stride").max(1);
    format!(
        "    int ch, t, j;
    for (ch = 0; ch < {c}; ++ch) {{
        for (t = 0; t < {out_len}; ++t) {{
            const float* v = &x[ch * {len} + t * {s}];
            float m = v[0];
            for (j = 1; j < {k}; ++j) if (v[j] > m) m = v[j];
            y[ch * {out_len} + t] = m;
        }}
    }}
"
    )
}
