//! JSON plan files:
//! `{id, ceiling_height, camera_height, rooms, furniture, level, seed}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FloorPlan, FurnishedScene, FurnitureBox, FurnitureLevel};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::real::Real;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDto {
    footprint: Vec<[f64; 2]>,
    height: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDto {
    id: String,
    ceiling_height: f64,
    camera_height: f64,
    rooms: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    furniture: Vec<BoxDto>,
    #[serde(default = "default_level")]
    level: FurnitureLevel,
    #[serde(default)]
    seed: u64,
}

fn default_level() -> FurnitureLevel {
    FurnitureLevel::Empty
}

fn to_dto<T: Real>(scene: &FurnishedScene<T>) -> PlanDto {
    let plan = &scene.plan;
    PlanDto {
        id: plan.id.clone(),
        ceiling_height: plan.ceiling_height.as_f64(),
        camera_height: plan.camera_height.as_f64(),
        rooms: plan
            .rooms
            .iter()
            .map(|r| r.iter().map(|v| [v.x.as_f64(), v.y.as_f64()]).collect())
            .collect(),
        furniture: scene
            .furniture
            .iter()
            .map(|b| BoxDto {
                footprint: b.footprint().iter().map(|v| [v.x.as_f64(), v.y.as_f64()]).collect(),
                height: b.height.as_f64(),
            })
            .collect(),
        level: scene.level,
        seed: scene.seed,
    }
}

fn parse_error(origin: &str, e: serde_json::Error) -> Error {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .map(str::to_owned);
    Error::Parse {
        path: origin.to_owned(),
        field,
        message: msg,
    }
}

fn from_dto<T: Real>(dto: PlanDto, origin: &str) -> Result<FurnishedScene<T>> {
    let rooms = dto
        .rooms
        .iter()
        .map(|r| r.iter().map(|&[x, y]| Vec2::new(T::lit(x), T::lit(y))).collect())
        .collect();
    let plan = FloorPlan {
        id: dto.id,
        rooms,
        ceiling_height: T::lit(dto.ceiling_height),
        camera_height: T::lit(dto.camera_height),
    };
    let mut furniture = Vec::with_capacity(dto.furniture.len());
    for (i, b) in dto.furniture.iter().enumerate() {
        if b.footprint.len() != 4 {
            return Err(Error::Parse {
                path: origin.to_owned(),
                field: Some(format!("furniture[{i}].footprint")),
                message: format!("expected 4 corners, found {}", b.footprint.len()),
            });
        }
        let xs = b.footprint.iter().map(|c| c[0]);
        let ys = b.footprint.iter().map(|c| c[1]);
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        furniture.push(FurnitureBox {
            min: Vec2::new(T::lit(x0), T::lit(y0)),
            max: Vec2::new(T::lit(x1), T::lit(y1)),
            height: T::lit(b.height),
        });
    }
    let scene = FurnishedScene {
        plan,
        furniture,
        level: dto.level,
        seed: dto.seed,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn plan_to_json<T: Real>(scene: &FurnishedScene<T>) -> String {
    serde_json::to_string_pretty(&to_dto(scene)).expect("plan serializes")
}

/// Parses and validates a plan document. `origin` names the source in errors.
pub fn plan_from_json<T: Real>(text: &str, origin: &str) -> Result<FurnishedScene<T>> {
    let dto: PlanDto = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    from_dto(dto, origin)
}

pub fn save_scene<T: Real>(scene: &FurnishedScene<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, plan_to_json(scene)).map_err(|e| Error::io(path, e))
}

pub fn save_plan<T: Real>(plan: &FloorPlan<T>, path: impl AsRef<Path>) -> Result<()> {
    save_scene(&FurnishedScene::empty(plan.clone()), path)
}

pub fn load_scene<T: Real>(path: impl AsRef<Path>) -> Result<FurnishedScene<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    plan_from_json(&text, &path.display().to_string())
}

pub fn load_plan<T: Real>(path: impl AsRef<Path>) -> Result<FloorPlan<T>> {
    load_scene(path).map(|s| s.plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_floorplan, place_furniture, GenerationParams};

    #[test]
    fn round_trip_is_exact() {
        let plan: FloorPlan<f64> = generate_floorplan(11, &GenerationParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_plan(&plan, &path).unwrap();
        assert_eq!(load_plan::<f64>(&path).unwrap(), plan);

        let scene = place_furniture(&plan, FurnitureLevel::Full, 2).unwrap();
        save_scene(&scene, &path).unwrap();
        assert_eq!(load_scene::<f64>(&path).unwrap(), scene);
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let plan: FloorPlan<f32> = generate_floorplan(12, &GenerationParams::default()).unwrap();
        let text = plan_to_json(&FurnishedScene::empty(plan.clone()));
        assert_eq!(plan_from_json::<f32>(&text, "mem").unwrap().plan, plan);
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"id": "x", "camera_height": 1.6, "rooms": [[[0,0],[4,0],[4,4],[0,4]]]}"#;
        match plan_from_json::<f64>(text, "mem") {
            Err(Error::Parse { field, message, .. }) => {
                assert_eq!(field.as_deref(), Some("ceiling_height"));
                assert!(message.contains("line"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn self_intersection_fails_validation() {
        let text = r#"{"id": "x", "ceiling_height": 2.6, "camera_height": 1.6,
            "rooms": [[[0,0],[4,4],[4,0],[0,4]]]}"#;
        assert!(matches!(plan_from_json::<f64>(text, "mem"), Err(Error::Validation(_))));
    }
}
