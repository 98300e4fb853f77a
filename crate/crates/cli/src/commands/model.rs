//! `bodyfit model {info, assemble, export-obj}`.

use std::path::PathBuf;

use bodyfit::mesh::Mesh;
use bodyfit::model::{flatten, BodyModel, ModelDims, Pose, ShapeParams};
use bodyfit::profile::ModelDescriptor;
use bodyfit::topo::{
    apply_map, apply_map_to_basis, blend_identity_bases, build_surface_map,
    joint_regressor_from_extremes, map_vertex_group, mask_basis_complement,
    override_rigid_skinning, transfer_joint_regressor, SurfaceMap, VertexMask, EYE_EXTREME_AXES,
};
use clap::Args;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::Deserialize;
use serde_json::json;

use crate::context::{require_path, write_json, CliError, CliResult, Context, EXIT_INPUT, EXIT_OK};

#[derive(Args)]
pub struct InfoArgs {
    /// SBM1 container or descriptor JSON.
    pub path: PathBuf,
}

pub fn info(ctx: &Context, args: InfoArgs) -> CliResult<u8> {
    require_path(&args.path, "model")?;
    ctx.echo_config("model info", json!({"path": args.path}));
    let is_json = args.path.extension().is_some_and(|e| e == "json");
    if is_json {
        let text = std::fs::read_to_string(&args.path)?;
        let descriptor: ModelDescriptor = serde_json::from_str(&text)
            .map_err(|e| CliError::input("descriptor", e.to_string()))?;
        let mismatches = descriptor.profile_mismatches();
        let report = json!({
            "kind": "descriptor",
            "profile": descriptor.profile,
            "dims": {
                "vertices": descriptor.dims.vertices,
                "polygons": descriptor.dims.polygons,
                "joints": descriptor.dims.joints,
                "face_identity": descriptor.dims.face_identity,
                "body_identity": descriptor.dims.body_identity,
                "expression": descriptor.dims.expression,
            },
            "landmark_sets": descriptor.landmark_sets,
            "profile_mismatches": mismatches,
        });
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
        if !report["profile_mismatches"].as_array().unwrap().is_empty() {
            return Err(CliError {
                kind: "profile-mismatch",
                message: report["profile_mismatches"].to_string(),
                exit: EXIT_INPUT,
            });
        }
        return Ok(EXIT_OK);
    }
    // Full container: loading validates every invariant.
    let model = BodyModel::load(&args.path).map_err(|e| CliError {
        kind: "invariant",
        message: e.to_string(),
        exit: EXIT_INPUT,
    })?;
    let report = json!({
        "kind": "body_model",
        "dims": {
            "vertices": model.dims.vertices,
            "polygons": model.faces.len(),
            "joints": model.dims.joints,
            "face_identity": model.dims.face_identity,
            "body_identity": model.dims.body_identity,
            "expression": model.dims.expression,
        },
        "invariants": "ok",
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(EXIT_OK)
}

/// Assembly manifest: sources, masks and overrides for the topology
/// transfer pipeline.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    /// Target topology (OBJ with positions and faces).
    target_mesh: PathBuf,
    /// Body source: template/skeleton/body bases/weights/regressor.
    body_model: PathBuf,
    /// Optional head source: face identity and expression bases.
    #[serde(default)]
    head_model: Option<PathBuf>,
    /// Head mask over target vertices: a JSON float array file, or a recipe
    /// built from mapped skinning weights plus mapped head vertex groups.
    #[serde(default)]
    head_mask: Option<MaskSpec>,
    /// Threshold for vertex-group mapping.
    #[serde(default = "default_threshold")]
    group_threshold: f64,
    /// Joints whose regressor row is rebuilt from the extreme points of a
    /// mapped head vertex group, with rigid skinning to match.
    #[serde(default)]
    eye_joints: Vec<GroupOverride>,
    /// Joints that take over a mapped head vertex group rigidly.
    #[serde(default)]
    rigid_skinning_overrides: Vec<GroupOverride>,
    /// Also write the surface maps next to the model.
    #[serde(default)]
    export_maps: bool,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MaskSpec {
    File(PathBuf),
    Recipe {
        /// Body-model joint whose mapped skinning weights seed the mask.
        body_joint: usize,
        /// Head-topology vertex-group files whose mapped vertices are set
        /// to one.
        #[serde(default)]
        add_head_groups: Vec<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
struct GroupOverride {
    joint: usize,
    /// JSON array of head-topology vertex indices.
    head_group: PathBuf,
}

#[derive(Args)]
pub struct AssembleArgs {
    /// Manifest JSON describing sources, masks and overrides.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model filename (inside --output-dir).
    #[arg(long, default_value = "assembled.sbm1")]
    pub output: String,
}

fn load_group(path: &PathBuf) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input("group", format!("{}: {e}", path.display())))?;
    let indices: Vec<usize> = serde_json::from_str(&text)
        .map_err(|e| CliError::input("group", format!("{}: {e}", path.display())))?;
    Ok(indices)
}

pub fn assemble(ctx: &Context, args: AssembleArgs) -> CliResult<u8> {
    require_path(&args.manifest, "manifest")?;
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&args.manifest)?)
        .map_err(|e| CliError::input("manifest", e.to_string()))?;
    ctx.echo_config(
        "model assemble",
        json!({"manifest": args.manifest, "output": args.output}),
    );

    let target = Mesh::read_obj(&manifest.target_mesh)?;
    let body = BodyModel::load(&manifest.body_model)?;
    let body_mesh = body.template_mesh();
    let n = target.vertices.len();

    let body_map = build_surface_map(&body_mesh, &target.vertices)?;

    // Head side (optional).
    let head = manifest
        .head_model
        .as_ref()
        .map(|p| BodyModel::load(p))
        .transpose()?;
    let head_data = head
        .as_ref()
        .map(|h| -> CliResult<(SurfaceMap, Mesh)> {
            let mesh = h.template_mesh();
            let map = build_surface_map(&mesh, &target.vertices)?;
            Ok((map, mesh))
        })
        .transpose()?;

    // Head mask on the target topology.
    let mask = match (&manifest.head_mask, &head_data) {
        (Some(MaskSpec::File(path)), _) => {
            let values: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| CliError::input("mask", e.to_string()))?;
            if values.len() != n {
                return Err(CliError::input(
                    "mask",
                    format!("mask has {} values, target has {n} vertices", values.len()),
                ));
            }
            VertexMask::new(values)?
        }
        (Some(MaskSpec::Recipe { body_joint, add_head_groups }), head_data) => {
            if *body_joint >= body.dims.joints {
                return Err(CliError::input("mask", "body_joint out of range"));
            }
            // Mapped skinning weights of the chosen joint give a smooth
            // base mask; mapped head groups are forced to one.
            let row = DMatrix::from_fn(body.dims.vertices, 1, |v, _| {
                body.skinning_weights[(*body_joint, v)]
            });
            let mapped = apply_map(&body_map, &body_mesh, &row)?;
            let mut values: Vec<f64> =
                (0..n).map(|i| mapped[(i, 0)].clamp(0.0, 1.0)).collect();
            if let Some((head_map, head_mesh)) = head_data {
                for group_path in add_head_groups {
                    let group = load_group(group_path)?;
                    let selected = map_vertex_group(
                        head_map,
                        head_mesh,
                        &group,
                        manifest.group_threshold,
                    )?;
                    for i in selected {
                        values[i] = 1.0;
                    }
                }
            } else if !add_head_groups.is_empty() {
                return Err(CliError::input(
                    "mask",
                    "add_head_groups requires a head_model",
                ));
            }
            VertexMask::new(values)?
        }
        (None, _) => VertexMask::new(vec![0.0; n])?,
    };

    // Transfer bases.
    let (face_identity_raw, expression_basis) = match &head_data {
        Some((head_map, head_mesh)) => {
            let h = head.as_ref().unwrap();
            (
                apply_map_to_basis(head_map, head_mesh, &h.face_identity_basis)?,
                apply_map_to_basis(head_map, head_mesh, &h.expression_basis)?,
            )
        }
        None => (DMatrix::zeros(3 * n, 0), DMatrix::zeros(3 * n, 0)),
    };
    let body_identity_raw = apply_map_to_basis(&body_map, &body_mesh, &body.body_identity_basis)?;
    let (face_identity_basis, body_identity_basis) =
        blend_identity_bases(&face_identity_raw, &body_identity_raw, &mask)?;
    let pose_raw = apply_map_to_basis(&body_map, &body_mesh, &body.pose_basis)?;
    let pose_basis = mask_basis_complement(&pose_raw, &mask)?;

    // Skinning weights transfer per joint row; barycentric mixing keeps
    // per-vertex sums at one.
    let weights_rows = {
        let data = DMatrix::from_fn(body.dims.vertices, body.dims.joints, |v, j| {
            body.skinning_weights[(j, v)]
        });
        let mapped = apply_map(&body_map, &body_mesh, &data)?;
        DMatrix::from_fn(body.dims.joints, n, |j, v| mapped[(v, j)])
    };

    // Joint regressor: exact row sums via nearest-vertex transfer.
    let mut joint_regressor =
        transfer_joint_regressor(&body_mesh.vertices, &target.vertices, &body.joint_regressor)?;

    let mut skinning_weights = weights_rows;
    for spec in &manifest.eye_joints {
        let (head_map, head_mesh) = head_data.as_ref().ok_or_else(|| {
            CliError::input("eye_joints", "eye regressors require a head_model")
        })?;
        let group = load_group(&spec.head_group)?;
        let target_group =
            map_vertex_group(head_map, head_mesh, &group, manifest.group_threshold)?;
        let row = joint_regressor_from_extremes(&target_group, &target.vertices, &EYE_EXTREME_AXES)?;
        if spec.joint >= body.dims.joints {
            return Err(CliError::input("eye_joints", "joint out of range"));
        }
        for v in 0..n {
            joint_regressor[(spec.joint, v)] = row[v];
        }
        skinning_weights = override_rigid_skinning(&skinning_weights, &target_group, spec.joint)?;
    }
    for spec in &manifest.rigid_skinning_overrides {
        let (head_map, head_mesh) = head_data.as_ref().ok_or_else(|| {
            CliError::input("rigid_skinning_overrides", "overrides require a head_model")
        })?;
        let group = load_group(&spec.head_group)?;
        let target_group =
            map_vertex_group(head_map, head_mesh, &group, manifest.group_threshold)?;
        if spec.joint >= body.dims.joints {
            return Err(CliError::input("rigid_skinning_overrides", "joint out of range"));
        }
        skinning_weights = override_rigid_skinning(&skinning_weights, &target_group, spec.joint)?;
    }

    let assembled = BodyModel {
        dims: ModelDims {
            vertices: n,
            joints: body.dims.joints,
            face_identity: face_identity_basis.ncols(),
            body_identity: body_identity_basis.ncols(),
            expression: expression_basis.ncols(),
        },
        template: flatten(&target.vertices),
        faces: target.faces.clone(),
        parents: body.parents.clone(),
        face_identity_basis,
        body_identity_basis,
        expression_basis,
        pose_basis,
        skinning_weights,
        joint_regressor,
    };
    assembled.validate().map_err(|e| CliError {
        kind: "invariant",
        message: e.to_string(),
        exit: EXIT_INPUT,
    })?;
    let out = ctx.out_path(&args.output);
    assembled.save(&out)?;
    if manifest.export_maps {
        std::fs::write(ctx.out_path("body_map.json"), body_map.to_json()?)?;
        if let Some((head_map, _)) = &head_data {
            std::fs::write(ctx.out_path("head_map.json"), head_map.to_json()?)?;
        }
    }
    let report = json!({
        "output": out,
        "dims": {
            "vertices": assembled.dims.vertices,
            "polygons": assembled.faces.len(),
            "joints": assembled.dims.joints,
            "face_identity": assembled.dims.face_identity,
            "body_identity": assembled.dims.body_identity,
            "expression": assembled.dims.expression,
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(EXIT_OK)
}

/// Parameter file for mesh export: coefficient arrays plus pose.
#[derive(Debug, Deserialize)]
struct ExportParams {
    #[serde(default)]
    gamma: Vec<f64>,
    #[serde(default)]
    beta: Vec<f64>,
    #[serde(default)]
    psi: Vec<f64>,
    #[serde(default)]
    theta: Vec<[f64; 3]>,
    #[serde(default)]
    root_translation: [f64; 3],
}

#[derive(Args)]
pub struct ExportObjArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON with gamma/beta/psi/theta/root_translation; missing blocks are
    /// zero.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "mesh.obj")]
    pub output: String,
}

pub fn export_obj(ctx: &Context, args: ExportObjArgs) -> CliResult<u8> {
    require_path(&args.model, "model")?;
    ctx.echo_config(
        "model export-obj",
        json!({"model": args.model, "params": args.params, "output": args.output}),
    );
    let model = BodyModel::load(&args.model)?;
    let params: ExportParams = match &args.params {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::input("params", e.to_string()))?,
        None => ExportParams {
            gamma: vec![],
            beta: vec![],
            psi: vec![],
            theta: vec![],
            root_translation: [0.0; 3],
        },
    };
    let pad = |mut v: Vec<f64>, len: usize, what: &'static str| -> CliResult<DVector<f64>> {
        if v.is_empty() {
            v = vec![0.0; len];
        }
        if v.len() != len {
            return Err(CliError::input(
                what,
                format!("expected {len} coefficients, got {}", v.len()),
            ));
        }
        Ok(DVector::from_vec(v))
    };
    let shape = ShapeParams {
        gamma: pad(params.gamma, model.dims.face_identity, "gamma")?,
        beta: pad(params.beta, model.dims.body_identity, "beta")?,
        psi: pad(params.psi, model.dims.expression, "psi")?,
    };
    let mut theta = params.theta;
    if theta.is_empty() {
        theta = vec![[0.0; 3]; model.dims.joints];
    }
    if theta.len() != model.dims.joints {
        return Err(CliError::input(
            "theta",
            format!("expected {} joints, got {}", model.dims.joints, theta.len()),
        ));
    }
    let pose = Pose {
        theta: theta
            .iter()
            .map(|a| Vector3::new(a[0], a[1], a[2]))
            .collect(),
        root_translation: Vector3::new(
            params.root_translation[0],
            params.root_translation[1],
            params.root_translation[2],
        ),
    };
    let mesh_buf = model.generate_mesh(&shape, &pose)?;
    let mesh = Mesh {
        vertices: bodyfit::model::unflatten(&mesh_buf),
        faces: model.faces.clone(),
    };
    let out = ctx.out_path(&args.output);
    mesh.write_obj(&out)?;
    write_json(
        &ctx.out_path("export_report.json"),
        &json!({"output": out, "vertices": mesh.vertices.len(), "faces": mesh.faces.len()}),
    )?;
    Ok(EXIT_OK)
}
