//! Deterministic assembly of functions into modules and modules into the
//! project script.
//!
//! Data flows by name: each call receives the variables named by its inputs
//! and binds variables named by its outputs. Inputs nobody produced become
//! parameters of the enclosing entry function.

use thiserror::Error;

use super::pysrc::{dedup_imports, rename_identifier, split_imports, top_level_defs};
use crate::domain::{FunctionThought, ModuleThought, ProjectRequirement};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("nothing to assemble")]
    Empty,
    #[error("{0}")]
    Mismatch(String),
}

/// What the project entry needs to know about a module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleInterface {
    pub entry: String,
    pub params: Vec<String>,
    pub returns: Vec<String>,
}

struct Call<'a> {
    callee: &'a str,
    inputs: Vec<&'a str>,
    outputs: Vec<&'a str>,
}

struct Wiring {
    params: Vec<String>,
    lines: Vec<String>,
    returns: Vec<String>,
}

fn wire(calls: &[Call<'_>]) -> Wiring {
    let mut bound: Vec<&str> = Vec::new();
    let mut params: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    for call in calls {
        for input in &call.inputs {
            if !bound.contains(input) && !params.iter().any(|p| p == input) {
                params.push(input.to_string());
            }
        }
        let args = call.inputs.join(", ");
        let line = match call.outputs.as_slice() {
            [] => format!("{}({args})", call.callee),
            outs => format!("{} = {}({args})", outs.join(", "), call.callee),
        };
        lines.push(line);
        bound.extend(call.outputs.iter().copied());
    }
    let returns = calls
        .last()
        .map(|c| c.outputs.iter().map(|s| s.to_string()).collect())
        .unwrap_or_default();
    Wiring { params, lines, returns }
}

fn docstring_line(text: &str) -> String {
    text.lines().next().unwrap_or_default().trim().replace("\"\"\"", "'''")
}

fn render_function(name: &str, params: &[String], doc: &str, lines: &[String], returns: &[String]) -> String {
    let mut s = format!("def {name}({}):\n", params.join(", "));
    if !doc.is_empty() {
        s.push_str(&format!("    \"\"\"{doc}\"\"\"\n"));
    }
    for l in lines {
        s.push_str("    ");
        s.push_str(l);
        s.push('\n');
    }
    match returns {
        [] if lines.is_empty() && doc.is_empty() => s.push_str("    pass\n"),
        [] => {}
        rs => s.push_str(&format!("    return {}\n", rs.join(", "))),
    }
    s
}

pub fn module_interface(module: &ModuleThought, functions: &[FunctionThought]) -> ModuleInterface {
    let w = wire(&function_calls(functions));
    ModuleInterface { entry: module.entry_name(), params: w.params, returns: w.returns }
}

fn function_calls(functions: &[FunctionThought]) -> Vec<Call<'_>> {
    functions
        .iter()
        .map(|f| Call {
            callee: &f.name,
            inputs: f.inputs.iter().map(|p| p.name.as_str()).collect(),
            outputs: f.outputs.iter().map(|p| p.name.as_str()).collect(),
        })
        .collect()
}

fn join_sections(imports: &[String], bodies: &[String]) -> String {
    let mut out = String::new();
    if !imports.is_empty() {
        out.push_str(&imports.join("\n"));
        out.push_str("\n\n\n");
    }
    out.push_str(&bodies.join("\n\n\n"));
    out.push('\n');
    out
}

/// Hoists and dedups imports, concatenates function bodies in tree order and
/// appends the module entry function.
pub fn assemble_module_source(
    module: &ModuleThought,
    functions: &[(&FunctionThought, &str)],
) -> Result<String, AssemblyError> {
    if functions.is_empty() {
        return Err(AssemblyError::Empty);
    }
    let splits: Vec<_> = functions.iter().map(|(_, src)| split_imports(src)).collect();
    let imports = dedup_imports(splits.iter().map(|s| s.imports.as_slice()));
    let thoughts: Vec<FunctionThought> = functions.iter().map(|(t, _)| (*t).clone()).collect();
    let w = wire(&function_calls(&thoughts));
    let mut bodies: Vec<String> = splits.into_iter().map(|s| s.body).collect();
    bodies.push(render_function(
        &module.entry_name(),
        &w.params,
        &docstring_line(&module.description),
        &w.lines,
        &w.returns,
    ));
    Ok(join_sections(&imports, &bodies))
}

/// A module ready for project assembly.
#[derive(Debug, Clone)]
pub struct ProjectPart<'a> {
    pub module: &'a ModuleThought,
    pub source: &'a str,
    pub interface: ModuleInterface,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectSource {
    pub source: String,
    pub notes: Vec<String>,
}

pub const PROJECT_ENTRY: &str = "main";

/// Concatenates module bodies under one import header and wires the module
/// entries in plan order from `main()`. Function names defined by more than
/// one module are suffixed with the module index.
pub fn assemble_project_source(
    parts: &[ProjectPart<'_>],
    requirement: &ProjectRequirement,
) -> Result<ProjectSource, AssemblyError> {
    if parts.is_empty() {
        return Err(AssemblyError::Empty);
    }
    let mut notes = Vec::new();
    let splits: Vec<_> = parts.iter().map(|p| split_imports(p.source)).collect();
    let imports = dedup_imports(splits.iter().map(|s| s.imports.as_slice()));

    let defs: Vec<Vec<String>> = splits.iter().map(|s| top_level_defs(&s.body)).collect();
    let mut bodies = Vec::new();
    let mut interfaces = Vec::new();
    for (i, (split, part)) in splits.iter().zip(parts).enumerate() {
        let mut body = split.body.clone();
        let mut iface = part.interface.clone();
        for name in &defs[i] {
            let owners: Vec<usize> = defs
                .iter()
                .enumerate()
                .filter(|(_, d)| d.contains(name))
                .map(|(j, _)| j)
                .collect();
            if owners.len() > 1 {
                let renamed = format!("{name}_{}", part.module.index);
                if i == owners[0] {
                    notes.push(format!(
                        "function name `{name}` is defined by modules {owners:?}; suffixed with the module index"
                    ));
                }
                body = rename_identifier(&body, name, &renamed);
                if iface.entry == *name {
                    iface.entry = renamed;
                }
            }
        }
        bodies.push(body);
        interfaces.push(iface);
    }

    let calls: Vec<Call<'_>> = interfaces
        .iter()
        .map(|iface| Call {
            callee: &iface.entry,
            inputs: iface.params.iter().map(String::as_str).collect(),
            outputs: iface.returns.iter().map(String::as_str).collect(),
        })
        .collect();
    let w = wire(&calls);
    let mut lines = Vec::new();
    let mut files = requirement.input_files.iter();
    for p in &w.params {
        match files.next() {
            Some(f) => lines.push(format!(
                "{p} = {}",
                serde_json::to_string(&f.path).expect("string literal")
            )),
            None => {
                notes.push(format!("project input `{p}` has no matching input file; bound to None"));
                lines.push(format!("{p} = None"));
            }
        }
    }
    lines.extend(w.lines);
    let mut main = render_function(
        PROJECT_ENTRY,
        &[],
        &docstring_line(&requirement.description),
        &lines,
        &w.returns,
    );
    main.push_str(&format!("\n\nif __name__ == \"__main__\":\n    {PROJECT_ENTRY}()"));
    bodies.push(main);
    Ok(ProjectSource { source: join_sections(&imports, &bodies), notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HyperThought, InputFile, InputKind, Port, TreeAddress};

    fn module(name: &str, index: usize) -> ModuleThought {
        ModuleThought {
            hyper: HyperThought::new(name, "img", "w").unwrap(),
            description: format!("{name} stage"),
            index,
            parent: "p".into(),
        }
    }

    fn func(name: &str, ins: &[&str], outs: &[&str], m: usize) -> FunctionThought {
        FunctionThought::new(
            name,
            "d",
            ins.iter().map(|n| Port::new(*n, "t")).collect(),
            outs.iter().map(|n| Port::new(*n, "t")).collect(),
            TreeAddress::module(m),
        )
        .unwrap()
    }

    #[test]
    fn two_functions_concatenated_with_entry() {
        let m = module("ImageInput", 0);
        let f1 = func("load_image", &["image_path"], &["image"], 0);
        let f2 = func("to_gray", &["image"], &["gray"], 0);
        let s1 = "import os\n\ndef load_image(image_path):\n    return open(image_path).read()\n";
        let s2 = "import os\nimport sys\n\ndef to_gray(image):\n    return image\n";
        let src = assemble_module_source(&m, &[(&f1, s1), (&f2, s2)]).unwrap();
        assert_eq!(src.matches("import os").count(), 1);
        assert!(src.starts_with("import os\nimport sys\n"));
        assert!(src.contains(&split_imports(s1).body));
        assert!(src.contains(&split_imports(s2).body));
        assert!(src.contains(
            "def run_image_input(image_path):\n    \"\"\"ImageInput stage\"\"\"\n    image = load_image(image_path)\n    gray = to_gray(image)\n    return gray\n"
        ));
        let iface = module_interface(&m, &[f1, f2]);
        assert_eq!(iface.params, vec!["image_path"]);
        assert_eq!(iface.returns, vec!["gray"]);
    }

    #[test]
    fn empty_module_is_an_error() {
        assert_eq!(assemble_module_source(&module("A", 0), &[]), Err(AssemblyError::Empty));
    }

    #[test]
    fn project_wires_modules_in_order_and_binds_inputs() {
        let req = ProjectRequirement::new(
            "p",
            "Read plates",
            vec![InputFile { path: "car.pgm".into(), kind: InputKind::Image }],
            ".",
            None,
        )
        .unwrap();
        let (a, b) = (module("ImageInput", 0), module("Reader", 1));
        let sa = "import os\n\n\ndef run_image_input(image_path):\n    return 1\n";
        let sb = "import os\n\n\ndef run_reader(gray):\n    return 2\n";
        let parts = vec![
            ProjectPart {
                module: &a,
                source: sa,
                interface: ModuleInterface { entry: a.entry_name(), params: vec!["image_path".into()], returns: vec!["gray".into()] },
            },
            ProjectPart {
                module: &b,
                source: sb,
                interface: ModuleInterface { entry: b.entry_name(), params: vec!["gray".into()], returns: vec!["text".into()] },
            },
        ];
        let out = assemble_project_source(&parts, &req).unwrap();
        assert!(out.notes.is_empty());
        assert!(out.source.contains(
            "def main():\n    \"\"\"Read plates\"\"\"\n    image_path = \"car.pgm\"\n    gray = run_image_input(image_path)\n    text = run_reader(gray)\n    return text\n"
        ));
        assert!(out.source.ends_with("if __name__ == \"__main__\":\n    main()\n"));
        assert_eq!(out.source.matches("import os").count(), 1);
    }

    #[test]
    fn colliding_names_get_module_suffix() {
        let req = ProjectRequirement::new("p", "x", vec![], ".", None).unwrap();
        let (a, b) = (module("A", 0), module("B", 1));
        let sa = "def helper():\n    return 1\n\n\ndef run_a():\n    return helper()\n";
        let sb = "def helper():\n    return 2\n\n\ndef run_b():\n    return helper()\n";
        let iface = |m: &ModuleThought| ModuleInterface { entry: m.entry_name(), params: vec![], returns: vec![] };
        let parts = vec![
            ProjectPart { module: &a, source: sa, interface: iface(&a) },
            ProjectPart { module: &b, source: sb, interface: iface(&b) },
        ];
        let out = assemble_project_source(&parts, &req).unwrap();
        assert_eq!(out.notes.len(), 1);
        assert!(out.source.contains("def helper_0():"));
        assert!(out.source.contains("return helper_1()"));
        assert!(!out.source.contains("def helper():"));
    }
}
