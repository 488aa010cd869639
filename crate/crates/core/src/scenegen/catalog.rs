use super::{ObjectShape, ObjectSpec, Texture};

fn flat(name: &str, shape: ObjectShape, color: [f64; 3]) -> ObjectSpec {
    ObjectSpec {
        name: name.into(),
        shape,
        color,
        texture: Texture::Flat,
    }
}

fn textured(name: &str, shape: ObjectShape, color: [f64; 3], seed: u64) -> ObjectSpec {
    ObjectSpec {
        name: name.into(),
        shape,
        color,
        texture: Texture::Noise {
            seed,
            scale_mm: 12.0,
        },
    }
}

/// Every known object, in a stable order.
///
/// The first five are the flat-coloured 3D-printed set; `household-*` are
/// textured stand-ins for photographed household items; `orange-cylinder`
/// is the simplified canonical proxy rendered for the textured target.
pub fn catalog() -> Vec<ObjectSpec> {
    use ObjectShape::*;
    vec![
        flat("red-cube", Cube { side_mm: 50.0 }, [0.85, 0.1, 0.1]),
        flat("green-cube", Cube { side_mm: 40.0 }, [0.1, 0.7, 0.2]),
        flat(
            "black-cylinder",
            Cylinder {
                radius_mm: 35.0,
                height_mm: 10.0,
            },
            [0.1, 0.1, 0.1],
        ),
        flat(
            "blue-prism",
            TriangularPrism {
                radius_mm: 45.0,
                height_mm: 10.0,
            },
            [0.1, 0.25, 0.85],
        ),
        flat("red-cube-small", Cube { side_mm: 40.0 }, [0.85, 0.1, 0.1]),
        textured(
            "household-target",
            Cylinder {
                radius_mm: 30.0,
                height_mm: 45.0,
            },
            [0.8, 0.5, 0.22],
            6,
        ),
        textured("household-box", Cube { side_mm: 45.0 }, [0.3, 0.45, 0.75], 7),
        textured(
            "household-can",
            Cylinder {
                radius_mm: 22.0,
                height_mm: 60.0,
            },
            [0.75, 0.15, 0.25],
            8,
        ),
        textured(
            "household-wedge",
            TriangularPrism {
                radius_mm: 40.0,
                height_mm: 30.0,
            },
            [0.55, 0.3, 0.65],
            9,
        ),
        textured("household-block", Cube { side_mm: 35.0 }, [0.35, 0.65, 0.3], 10),
        flat(
            "orange-cylinder",
            Cylinder {
                radius_mm: 30.0,
                height_mm: 45.0,
            },
            [1.0, 0.55, 0.1],
        ),
    ]
}

pub fn lookup(name: &str) -> Option<ObjectSpec> {
    catalog().into_iter().find(|o| o.name == name)
}

pub fn object_names() -> Vec<String> {
    catalog().into_iter().map(|o| o.name).collect()
}
