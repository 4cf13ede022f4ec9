use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::runtime::Architecture;
use crate::scaffold::ProjectManifest;

use super::compose::image_name;
use super::{ensure_valid, is_valid_tag, DeployError, DeploymentConfig};

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Replaces the deployment's default tag. Per-instance tags still apply.
    pub tag: Option<String>,
    pub push: bool,
    /// Architecture of the build machine; multi-arch builds that are not pushed build only
    /// this one. Defaults to the architecture of the running binary.
    pub native: Option<Architecture>,
}

/// One image to build.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildEntry {
    pub service: String,
    pub image: String,
    pub context: PathBuf,
    pub dockerfile: PathBuf,
    pub architectures: Vec<Architecture>,
    pub push: bool,
    native: Option<Architecture>,
}

impl BuildEntry {
    /// The command lines building (and pushing, if requested) this image.
    pub fn commands(&self) -> Vec<Vec<String>> {
        let file = self.dockerfile.display().to_string();
        let context = self.context.display().to_string();
        let platforms = self
            .architectures
            .iter()
            .map(|a| a.platform())
            .collect::<Vec<_>>()
            .join(",");
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let local = self.architectures.len() == 1 && Some(self.architectures[0]) == self.native;
        if local {
            let mut cmds = vec![s(&[
                "docker",
                "build",
                "-f",
                &file,
                "-t",
                &self.image,
                &context,
            ])];
            if self.push {
                cmds.push(s(&["docker", "push", &self.image]));
            }
            cmds
        } else {
            let output = if self.push { "--push" } else { "--load" };
            vec![s(&[
                "docker",
                "buildx",
                "build",
                "--platform",
                &platforms,
                "-f",
                &file,
                "-t",
                &self.image,
                output,
                &context,
            ])]
        }
    }
}

/// Images to build for the internal services of a deployment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildPlan {
    pub tag: String,
    pub entries: Vec<BuildEntry>,
}

fn shell_word(w: &str) -> String {
    if !w.is_empty()
        && w.chars()
            .all(|c| c.is_ascii_alphanumeric() || "_-./:,=@%+".contains(c))
    {
        w.to_owned()
    } else {
        format!("'{}'", w.replace('\'', r"'\''"))
    }
}

impl BuildPlan {
    pub fn commands(&self) -> Vec<Vec<String>> {
        self.entries.iter().flat_map(BuildEntry::commands).collect()
    }

    /// Project-relative path of the emitted script, `build/build_<tag>.sh`.
    pub fn script_path(&self) -> PathBuf {
        PathBuf::from("build").join(format!("build_{}.sh", self.tag))
    }

    /// A POSIX shell script running every command from the project root.
    pub fn script(&self) -> String {
        let mut out = String::from("#!/bin/sh\n");
        let _ = writeln!(
            out,
            "# Generated by fastiot {}. Do not edit.",
            env!("CARGO_PKG_VERSION")
        );
        out.push_str("set -eu\ncd \"$(dirname \"$0\")/..\"\n");
        for cmd in self.commands() {
            let line: Vec<String> = cmd.iter().map(|w| shell_word(w)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One entry per internal (service, tag) pair. External services are pulled, not built.
/// Multi-architecture images are only built for every architecture when pushed, since a
/// local image store holds one platform per tag; otherwise the native (or first) one is built.
pub fn plan_builds(
    project: &ProjectManifest,
    deployment: &DeploymentConfig,
    options: &BuildOptions,
) -> Result<BuildPlan, DeployError> {
    let mut deployment = deployment.clone();
    if let Some(tag) = &options.tag {
        if !is_valid_tag(tag) {
            return Err(DeployError::InvalidTag(tag.clone()));
        }
        deployment.default_tag = tag.clone();
    }
    ensure_valid(project, &deployment)?;
    let native = options.native.or_else(Architecture::native);
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for inst in deployment
        .services
        .iter()
        .filter(|i| i.is_internal(project))
    {
        let tag = inst.effective_tag(&deployment.default_tag);
        if !seen.insert((inst.service.clone(), tag.to_owned())) {
            continue;
        }
        let manifest = project.service(&inst.service).expect("validated above");
        if manifest.architectures.is_empty() {
            return Err(DeployError::NoArchitectures(manifest.name.clone()));
        }
        let mut archs = manifest.architectures.clone();
        archs.sort();
        archs.dedup();
        if !options.push && archs.len() > 1 {
            let pick = native.filter(|n| archs.contains(n)).unwrap_or(archs[0]);
            archs = vec![pick];
        }
        entries.push(BuildEntry {
            service: inst.service.clone(),
            image: image_name(project, inst, &deployment.default_tag),
            context: PathBuf::from("."),
            dockerfile: PathBuf::from("src/services")
                .join(&inst.service)
                .join("Dockerfile"),
            architectures: archs,
            push: options.push,
            native,
        });
    }
    entries.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(BuildPlan {
        tag: deployment.default_tag,
        entries,
    })
}
