// Just enough forward kinematics to pose the server's robot model for
// rendering: revolute tree, quaternion origins, collision spheres.

export interface ModelJoint {
  name: string;
  parent: string;
  child: string;
  axis: [number, number, number];
  origin: { position: [number, number, number]; orientation: [number, number, number, number] };
}

export interface ModelSphere {
  center: [number, number, number];
  radius: number;
}

export interface RobotModelDoc {
  name: string;
  base_link: string;
  joints: ModelJoint[];
  links: { name: string; spheres: ModelSphere[] }[];
}

type Vec3 = [number, number, number];
type Mat3 = number[]; // row-major 9

const I3: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

function quatToMat(q: [number, number, number, number]): Mat3 {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
    }
  }
  return out;
}

function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

function axisRotation(axis: Vec3, angle: number): Mat3 {
  const [x, y, z] = axis;
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const t = 1 - c;
  return [
    t * x * x + c, t * x * y - s * z, t * x * z + s * y,
    t * x * y + s * z, t * y * y + c, t * y * z - s * x,
    t * x * z - s * y, t * y * z + s * x, t * z * z + c,
  ];
}

export interface LinkPose {
  name: string;
  rotation: Mat3;
  position: Vec3;
}

/** World pose of every link for the given joint angles (model base frame). */
export function linkPoses(model: RobotModelDoc, q: number[]): Map<string, LinkPose> {
  const poses = new Map<string, LinkPose>();
  poses.set(model.base_link, { name: model.base_link, rotation: I3, position: [0, 0, 0] });
  model.joints.forEach((joint, i) => {
    const parent = poses.get(joint.parent);
    if (!parent) throw new Error(`joint ${joint.name}: parent ${joint.parent} not yet posed`);
    const originRot = quatToMat(joint.origin?.orientation ?? [1, 0, 0, 0]);
    const originPos: Vec3 = joint.origin?.position ?? [0, 0, 0];
    const p = matVec(parent.rotation, originPos);
    const position: Vec3 = [parent.position[0] + p[0], parent.position[1] + p[1], parent.position[2] + p[2]];
    const rotation = matMul(matMul(parent.rotation, originRot), axisRotation(joint.axis, q[i] ?? 0));
    poses.set(joint.child, { name: joint.child, rotation, position });
  });
  return poses;
}

export interface WorldSphere {
  center: Vec3;
  radius: number;
  linkIndex: number;
}

export function worldSpheres(model: RobotModelDoc, q: number[]): WorldSphere[] {
  const poses = linkPoses(model, q);
  const out: WorldSphere[] = [];
  model.links.forEach((link, li) => {
    const pose = poses.get(link.name);
    if (!pose) return;
    for (const s of link.spheres ?? []) {
      const c = matVec(pose.rotation, s.center);
      out.push({
        center: [pose.position[0] + c[0], pose.position[1] + c[1], pose.position[2] + c[2]],
        radius: s.radius,
        linkIndex: li,
      });
    }
  });
  return out;
}
