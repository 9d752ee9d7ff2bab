#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use tiercode::agents::TemplateSet;
use tiercode::domain::ClockMode;
use tiercode::kb::{HashingEmbedder, KnowledgeBases};
use tiercode::llm::{BackendRef, Gateway, PriceTable, Script};
use tiercode::pipeline::{Pipeline, RunOutcome};
use tiercode::sandbox::{BackendKind, Catalog, Sandbox};
use tiercode::{ProjectRequirement, RunConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn script_from(text: &str) -> Arc<Script> {
    Arc::new(Script::parse(text).expect("script parses"))
}

pub fn config(script: &Arc<Script>) -> RunConfig {
    let r = BackendRef::scripted(script.clone());
    let mut c = RunConfig::new(r.clone(), r);
    c.clock = ClockMode::Logical;
    c.sandbox_timeout = 30.0;
    c
}

pub fn sandbox(timeout: f64) -> Sandbox {
    Sandbox::new(Catalog::default(), BackendKind::subprocess(), Duration::from_secs_f64(timeout), 4)
}

pub struct Harness {
    pub config: RunConfig,
    pub gateway: Gateway,
    pub templates: TemplateSet,
    pub sandbox: Sandbox,
    pub knowledge: KnowledgeBases,
    pub embedder: HashingEmbedder,
}

impl Harness {
    pub fn new(config: RunConfig) -> Self {
        let gateway = Gateway::connect(&config.decision_model, &config.implementer_model).unwrap();
        let embedder = HashingEmbedder::default();
        Self {
            sandbox: sandbox(config.sandbox_timeout),
            gateway,
            templates: TemplateSet::default(),
            knowledge: KnowledgeBases::seed(&embedder).unwrap(),
            embedder,
            config,
        }
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            config: &self.config,
            gateway: &self.gateway,
            templates: &self.templates,
            sandbox: &self.sandbox,
            knowledge: &self.knowledge,
            embedder: &self.embedder,
            prices: PriceTable::default(),
        }
    }

    pub fn run(&self, req: &ProjectRequirement, run_dir: &Path, inputs: &Path) -> RunOutcome {
        self.pipeline().run_project(req, run_dir, inputs).expect("run sets up")
    }
}

const SCENARIO_PLAN: &str = "=== team_leader plan /
<<<BEGIN team_leader>>>
ENVIRONMENT: python-imaging
---
MODULE_NAME: Scaler
MODULE_DESCRIPTION: Takes values and produces doubled, each value multiplied by two.
<<<END team_leader>>>

=== module_leader split_functions /0
<<<BEGIN module_leader>>>
FUNCTION_NAME: double_values
DESCRIPTION: Multiply every value by two.
INPUTS: values: list of numbers
OUTPUTS: doubled: list of numbers
<<<END module_leader>>>

=== function_coordinator refine /0
<<<BEGIN function_coordinator>>>
FUNCTION_NAME: double_values
SIGNATURE: def double_values(values: list) -> list:
DOCSTRING: Returns a new list holding each input value times two, in order.
<<<END function_coordinator>>>

=== tester draft_tests /0/0
```python
from double_values import double_values

assert double_values([1, 2]) == [2, 4], double_values([1, 2])
print(\"double_values ok\")
```

=== coder review_tests /0/0
<<<BEGIN coder_review>>>
VERDICT: no_changes
<<<END coder_review>>>

=== module_leader module_tests /0
```python
from scaler import run_scaler

assert run_scaler([1, 2]) == [2, 4]
assert run_scaler([]) == []
print(\"scaler ok\")
```
";

/// Passes the function test, crashes on an empty list.
const FRAGILE: &str = "def double_values(values: list) -> list:\n    return [values[0] * 2] + [v * 2 for v in values[1:]]";
const WRONG: &str = "def double_values(values: list) -> list:\n    return [v + 1 for v in values]";
const ROBUST_MODULE: &str = "def double_values(values: list) -> list:\n    return [v * 2 for v in values]\n\n\ndef run_scaler(values):\n    doubled = double_values(values)\n    return doubled";

fn fence(code: &str) -> String {
    format!("```python\n{code}\n```\n\n")
}

/// One module, one function. `functions[i]` says whether generation i passes
/// the function test; passing generations are fragile on empty input, so the
/// module test fails until a correction with `modules[j] == true` arrives.
pub fn scenario_script(functions: &[bool], corrections: &[bool]) -> String {
    let mut s = SCENARIO_PLAN.to_string();
    for (i, pass) in functions.iter().enumerate() {
        let stage = if i == 0 { "draft_function" } else { "regenerate" };
        s.push_str(&format!("\n=== coder {stage} /0/0\n"));
        s.push_str(&fence(if *pass { FRAGILE } else { WRONG }));
    }
    for pass in corrections {
        s.push_str("\n=== function_coordinator correct_module /0\n");
        let still_fragile = FRAGILE.replace("values[0]", "values[-1]");
        s.push_str(&fence(if *pass { ROBUST_MODULE } else { &still_fragile }));
    }
    s
}

pub fn scenario_requirement() -> ProjectRequirement {
    tiercode::manifest::parse_project(
        "id: scaler\nenvironment_hint: python-imaging\nworkdir: .\n\nDouble every value in a list of numbers.\n",
    )
    .unwrap()
}
